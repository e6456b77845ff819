import numpy as np
import pytest

from bunca.autograd import NumericalError, Tensor
from bunca.enums import CHECKPOINT_FILE, METRICS_FILE
from bunca.graph import SparseBinaryMatrix
from bunca.objectives import TripleBatch
from bunca.service import trainer as trainer_module
from bunca.service.evaluator import Evaluator, masks_for
from bunca.service.trainer import (
    BatchLoss,
    DivergenceError,
    EpochRecord,
    SamplingError,
    Trainer,
    TrainHistory,
    batch_loss,
    epoch_batches,
    forward_batch,
    full_batch,
    gradcheck_loss,
    sample_negatives,
    sample_triples,
)
from bunca.synth import SynthSpec, synth_plan
from tests.helpers import dense_mean_pool, dense_power_sum, make_model, small_config


def test_single_choice_negative(rng):
    x = SparseBinaryMatrix.from_pairs([0], [0], 1, 2)
    batch = sample_triples(x, 50, rng)
    assert set(batch.neg) == {1}
    assert set(batch.pos) == {0}


def test_sampling_is_seeded(toy):
    a = sample_triples(toy.train, 8, np.random.default_rng(5))
    b = sample_triples(toy.train, 8, np.random.default_rng(5))
    assert np.array_equal(a.users, b.users)
    assert np.array_equal(a.neg, b.neg)


def test_negatives_are_never_interacted(toy, rng):
    for batch in epoch_batches(toy.train, 3, rng, negatives=2):
        for u, n in zip(batch.users, batch.neg):
            assert not toy.train.contains(u, n)


def test_epoch_visits_every_interaction_once(toy, rng):
    seen = []
    for batch in epoch_batches(toy.train, 4, rng):
        seen.extend(zip(batch.users.tolist(), batch.pos.tolist()))
    rows, cols = toy.train.pairs()
    assert sorted(seen) == sorted(zip(rows.tolist(), cols.tolist()))


def test_negatives_are_uniform(rng):
    x = SparseBinaryMatrix.from_pairs([0], [0], 1, 3)
    n = 10_000
    neg = sample_negatives(x, np.zeros(n, dtype=np.int64), rng)
    counts = np.bincount(neg, minlength=3)
    sigma = np.sqrt(n * 0.5 * 0.5)
    assert counts[0] == 0
    assert abs(counts[1] - n / 2) <= 3 * sigma


def test_saturated_user_is_named(rng):
    x = SparseBinaryMatrix.from_pairs([0, 1, 1], [0, 0, 1], 2, 2)
    with pytest.raises(SamplingError) as ie:
        sample_negatives(x, np.array([0, 1]), rng)
    assert "user 1" in str(ie.value)


def test_empty_split_cannot_be_sampled(rng):
    with pytest.raises(SamplingError):
        sample_triples(SparseBinaryMatrix.empty(2, 2), 4, rng)


def test_single_triple_forward_is_finite(toy_model):
    loss = batch_loss(toy_model, TripleBatch(np.array([0]), np.array([0]), np.array([2])))
    for part in (loss.total, loss.bpr, loss.contrastive):
        assert np.isfinite(part.item())


def test_contrastive_uses_unique_users_and_positive_bundles(toy_model, mocker):
    spy = mocker.spy(trainer_module, "discrete_contrastive")
    batch = TripleBatch(np.array([1, 1, 3]), np.array([1, 2, 2]), np.array([0, 0, 4]))
    out = forward_batch(toy_model, batch)
    user_call, bundle_call = spy.call_args_list
    assert user_call.args[0].shape[0] == 2
    assert bundle_call.args[0].shape[0] == 2
    assert np.array_equal(bundle_call.args[0].values, out.state.sv_bundles.values[[1, 2]])


def test_contrastive_skipped_without_weight(toy, mocker):
    spy = mocker.spy(trainer_module, "concrete_contrastive")
    out = forward_batch(make_model(toy, lambda1=0.0), full_batch(toy.train))
    assert out.contrastive.item() == 0.0
    spy.assert_not_called()


def _dense_normalize(adjacency):
    deg = adjacency.sum(axis=1)
    inv = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    return inv[:, None] * adjacency * inv[None, :]


def _dense_bipartite(m):
    r, c = m.shape
    return np.block([[np.zeros((r, r)), m], [m.T, np.zeros((c, c))]])


def _dense_bpr(ds, model, batch):
    """BPR of the enhancement-free model, recomputed from dense matrices."""
    cfg, params = model.config, model.params
    T_U, T_B, T_I = (params[name].values for name in ("T_U", "T_B", "T_I"))
    x = ds.train.to_dense()
    n_users, n_bundles = x.shape
    uu = (x @ x.T >= 1).astype(float)
    bb = (x.T @ x >= 1).astype(float)
    np.fill_diagonal(uu, 0.0)
    np.fill_diagonal(bb, 0.0)
    unified = _dense_normalize(np.block([[uu, x], [x.T, bb]]))
    sv = dense_power_sum(unified, np.vstack([T_U, T_B]), cfg.H)
    scores = sv[:n_users] @ sv[n_users:].T

    if cfg.use_rv:
        ui, bi = ds.user_item.to_dense(), ds.bundle_item.to_dense()
        ui_graph = _dense_normalize(_dense_bipartite(ui))
        bi_graph = _dense_normalize(_dense_bipartite(bi))
        up = dense_power_sum(ui_graph, np.vstack([T_U, T_I]), cfg.H_sub)
        bc = dense_power_sum(bi_graph, np.vstack([T_B, T_I]), cfg.H_sub)
        up_users, up_bundles = up[:n_users], dense_mean_pool(bi, up[n_users:])
        bc_users, bc_bundles = dense_mean_pool(ui, bc[n_bundles:]), bc[:n_bundles]
        rv_users = cfg.beta * bc_users + (1 - cfg.beta) * up_users
        rv_bundles = cfg.beta * bc_bundles + (1 - cfg.beta) * up_bundles
        scores = scores + rv_users @ rv_bundles.T

    gap = scores[batch.users, batch.neg] - scores[batch.users, batch.pos]
    return np.mean(np.logaddexp(0.0, gap))


@pytest.mark.parametrize("overrides", [{}, {"beta": 0.3}, {"use_rv": False}])
def test_bpr_only_loss_matches_dense_recomputation(toy, overrides):
    model = make_model(
        toy, alpha=0.0, mu=1.0, gamma=1.0, lambda1=0.0, lambda2=0.0, **overrides
    )
    batch = full_batch(toy.train, seed=3)
    expected = _dense_bpr(toy, model, batch)
    assert batch_loss(model, batch).total.item() == pytest.approx(expected, abs=1e-10)


def test_one_epoch_gives_one_record(toy, tmp_path):
    trainer = Trainer(small_config(), toy, tmp_path)
    _, history = trainer.fit()
    assert len(history) == 1
    assert history.best_epoch == 1
    assert (tmp_path / CHECKPOINT_FILE).exists()
    lines = (tmp_path / METRICS_FILE).read_text().splitlines()
    assert len(lines) == 1
    assert '"tune"' in lines[0]


def test_seeded_runs_are_identical(toy, tmp_path):
    cfg = small_config(epochs=3)
    _, first = Trainer(cfg, toy, tmp_path / "a").fit()
    _, second = Trainer(cfg, toy, tmp_path / "b").fit()
    assert first.final_loss == second.final_loss
    for fname in (CHECKPOINT_FILE, METRICS_FILE):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_loss_decreases_on_fixed_batch(toy):
    trainer = Trainer(small_config(lr=1e-3), toy)
    batch = full_batch(toy.train)
    losses = [trainer.step(batch).total.item() for _ in range(6)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_step_changes_parameters(toy):
    trainer = Trainer(small_config(), toy)
    before = trainer.params.snapshot()
    trainer.step(full_batch(toy.train))
    assert any(not np.array_equal(before[n], t.values) for n, t in trainer.params.items())


def test_nan_loss_is_divergence(toy, mocker):
    nan = Tensor(np.nan)
    mocker.patch.object(Trainer, "step", return_value=BatchLoss(nan, nan, nan))
    with pytest.raises(DivergenceError) as ie:
        Trainer(small_config(), toy).fit()
    assert "epoch 1" in str(ie.value)


def test_numerical_error_is_divergence(toy, mocker):
    failure = NumericalError("exp produced non-finite values")
    mocker.patch.object(Trainer, "step", side_effect=failure)
    with pytest.raises(DivergenceError):
        Trainer(small_config(), toy).run_epoch(4)


def test_early_stopping_restores_best(toy, mocker):
    trainer = Trainer(small_config(epochs=10, patience=2), toy)
    scores = iter([0.5, 0.9, 0.4, 0.3, 0.2])
    report = mocker.Mock()
    report.get.side_effect = lambda *_: next(scores)
    report.to_dict.return_value = {}
    mocker.patch.object(trainer, "validate", return_value=report)
    snapshots = []
    original = trainer.run_epoch

    def run_epoch(epoch):
        record = original(epoch)
        snapshots.append(trainer.params.snapshot())
        return record

    mocker.patch.object(trainer, "run_epoch", side_effect=run_epoch)
    params, history = trainer.fit()
    assert history.stopped_early
    assert len(history) == 4
    assert history.best_epoch == 2
    assert np.array_equal(params["T_U"].values, snapshots[1]["T_U"])


def test_history_keeps_epoch_order():
    history = TrainHistory()
    history.append(EpochRecord(1, 1.0, 1.0, 0.0, 0.1))
    with pytest.raises(ValueError):
        history.append(EpochRecord(1, 1.0, 1.0, 0.0, 0.1))
    assert "wall_time" not in history.records[0].to_dict()


def test_full_loss_gradients(toy):
    model = make_model(toy)
    report = gradcheck_loss(model, full_batch(toy.train), tol=1e-4)
    assert report.passed, report.to_dict()


def _synthetic():
    return synth_plan(SynthSpec(4, 12, 8, 10, 0.05, seed=7)).dataset("planted")


def _acceptance_config(**overrides):
    values = dict(d=64, lr=1e-3, batch_size=16, epochs=300, patience=50, eval_every=5, seed=7)
    values.update(overrides)
    return small_config(**values)


@pytest.mark.slow
def test_planted_structure_is_learned():
    ds = _synthetic()
    trainer = Trainer(_acceptance_config(), ds, ks=(5, 20))
    trainer.fit()
    report = Evaluator(trainer.model.score_matrix(), masks_for(ds, "test")).evaluate(ds.test, (5,))
    assert report.get("recall", 5) >= 0.8
    assert report.get("ndcg", 5) >= 0.6


@pytest.mark.slow
def test_training_without_contrastive_loss_converges():
    ds = _synthetic()
    _, history = Trainer(_acceptance_config(lambda1=0.0, epochs=100), ds).fit()
    assert np.isfinite(history.final_loss)
    assert history.final_loss < history.records[0].loss
