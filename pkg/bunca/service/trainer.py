"""Training service

Triples (user, interacted bundle, non-interacted bundle) are drawn from the
training split, the whole model runs forward once per batch, and Adam follows
the gradient of ``bpr + lambda1 * contrastive + lambda2 * ||theta||^2``.
Validation on the tune split drives early stopping and best-checkpoint
selection.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from bunca import BuncaError
from bunca import autograd as ag
from bunca.autograd import NumericalError, ParameterSet, Tensor, grad
from bunca.checkpoint import save_checkpoint
from bunca.config import TrainConfig
from bunca.dataset import Dataset
from bunca.enums import CHECKPOINT_FILE, DEFAULT_KS, EARLY_STOP_METRIC, METRICS_FILE
from bunca.graph import SparseBinaryMatrix
from bunca.gradcheck import GradcheckReport, gradcheck
from bunca.log import DebugMixin, warning
from bunca.models.recommender import BundleRecommender, ForwardState, build_graphs, regularised
from bunca.objectives import (
    TripleBatch,
    bpr_loss,
    combine_contrastive,
    concrete_contrastive,
    discrete_contrastive,
    fuse_multiview,
    score,
    total_loss,
)
from bunca.optim import AdamState, adam_step
from bunca.service.evaluator import MetricsReport, evaluate_all

PathLike = Union[str, Path]


class SamplingError(BuncaError):
    """Raised when no negative bundle exists for a user."""


class DivergenceError(BuncaError):
    """Raised when the training loss stops being finite."""


def _interaction_keys(x: SparseBinaryMatrix) -> np.ndarray:
    rows, cols = x.pairs()
    return rows * x.n_cols + cols


def sample_negatives(
    x: SparseBinaryMatrix, users: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One uniformly drawn non-interacted bundle per user, by rejection."""
    users = np.asarray(users, dtype=np.int64)
    full = np.flatnonzero(x.row_degrees() >= x.n_cols)
    saturated = np.intersect1d(users, full)
    if len(saturated):
        raise SamplingError(
            f"user {saturated[0]} interacted with every bundle, no negative to sample"
        )
    keys = _interaction_keys(x)
    neg = rng.integers(0, x.n_cols, size=len(users))
    pending = np.flatnonzero(np.isin(users * x.n_cols + neg, keys))
    while len(pending):
        neg[pending] = rng.integers(0, x.n_cols, size=len(pending))
        pending = pending[np.isin(users[pending] * x.n_cols + neg[pending], keys)]
    return neg


def _triples(
    x: SparseBinaryMatrix, picks: np.ndarray, rng: np.random.Generator, negatives: int
) -> TripleBatch:
    rows, cols = x.pairs()
    users = np.repeat(rows[picks], negatives)
    pos = np.repeat(cols[picks], negatives)
    return TripleBatch(users, pos, sample_negatives(x, users, rng))


def sample_triples(
    x: SparseBinaryMatrix, batch_size: int, rng: np.random.Generator, negatives: int = 1
) -> TripleBatch:
    """``batch_size`` positives drawn uniformly from the stored interactions."""
    if not x.nnz:
        raise SamplingError("the training split has no interactions")
    picks = rng.integers(0, x.nnz, size=batch_size)
    return _triples(x, picks, rng, negatives)


def epoch_batches(
    x: SparseBinaryMatrix, batch_size: int, rng: np.random.Generator, negatives: int = 1
) -> Iterator[TripleBatch]:
    """One shuffled pass over every training interaction."""
    if not x.nnz:
        raise SamplingError("the training split has no interactions")
    order = rng.permutation(x.nnz)
    for start in range(0, x.nnz, batch_size):
        yield _triples(x, order[start : start + batch_size], rng, negatives)


@dataclass(frozen=True, eq=False)
class BatchOutput:
    pos: Tensor
    neg: Tensor
    contrastive: Tensor
    state: ForwardState


def _zero() -> Tensor:
    return Tensor(0.0)


def forward_batch(model: BundleRecommender, batch: TripleBatch) -> BatchOutput:
    """Forward over all entities, then score and contrast the batch rows."""
    c = model.config
    hp = c.hyper_params
    state = model.forward()
    users = state.users(hp.mu)
    bundles = state.bundles(hp.mu)
    pos = score(ag.gather_rows(users, batch.users), ag.gather_rows(bundles, batch.pos))
    neg = score(ag.gather_rows(users, batch.users), ag.gather_rows(bundles, batch.neg))

    uu, ub = batch.unique_users(), batch.positive_bundles()
    gamma = hp.gamma
    if not (c.use_dc or c.use_cc) or hp.lambda1 == 0:
        return BatchOutput(pos, neg, _zero(), state)

    def views(sv, rv, ids):
        return ag.gather_rows(sv, ids), ag.gather_rows(rv, ids)

    sv_u, rv_u = views(state.sv_users, state.rv_users, uu)
    sv_b, rv_b = views(state.sv_bundles, state.rv_bundles, ub)
    if gamma > 0:
        dc_u = discrete_contrastive(sv_u, rv_u, hp.tau)
        dc_b = discrete_contrastive(sv_b, rv_b, hp.tau)
    else:
        dc_u = dc_b = _zero()
    if gamma < 1:
        cc_u = concrete_contrastive(fuse_multiview(sv_u, rv_u), hp.tau)
        cc_b = concrete_contrastive(fuse_multiview(sv_b, rv_b), hp.tau)
    else:
        cc_u = cc_b = _zero()
    return BatchOutput(pos, neg, combine_contrastive(dc_u, dc_b, cc_u, cc_b, gamma), state)


@dataclass(frozen=True, eq=False)
class BatchLoss:
    total: Tensor
    bpr: Tensor
    contrastive: Tensor


def batch_loss(model: BundleRecommender, batch: TripleBatch) -> BatchLoss:
    c = model.config
    hp = c.hyper_params
    out = forward_batch(model, batch)
    bpr = bpr_loss(out.pos, out.neg)
    if c.reg_batch_only:
        theta = regularised(model, batch.unique_users(), batch.unique_bundles())
    else:
        theta = model.params
    total = total_loss(bpr, out.contrastive, theta, hp.lambda1, hp.lambda2)
    return BatchLoss(total, bpr, out.contrastive)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    bpr: float
    contrastive: float
    wall_time: float
    metrics: Optional[MetricsReport] = None

    def to_dict(self) -> dict:
        """Stream form; wall time is left out so seeded runs match byte for byte."""
        out = {
            "epoch": self.epoch,
            "loss": self.loss,
            "bpr": self.bpr,
            "contrastive": self.contrastive,
        }
        if self.metrics is not None:
            out["tune"] = self.metrics.to_dict()
        return out


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_score: Optional[float] = None
    stopped_early: bool = False

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(f"epoch {record.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss


class Trainer(DebugMixin):
    """Runs the epoch loop for one model on one dataset."""

    name = "train"

    def __init__(
        self,
        config: TrainConfig,
        dataset: Dataset,
        out_dir: Optional[PathLike] = None,
        ks: Sequence[int] = DEFAULT_KS,
        model: Optional[BundleRecommender] = None,
        checkpoint: Optional[PathLike] = None,
    ):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir else None
        if checkpoint:
            self.checkpoint = Path(checkpoint)
        else:
            self.checkpoint = self.out_dir / CHECKPOINT_FILE if self.out_dir else None
        metric, k = EARLY_STOP_METRIC
        self.stop_metric, self.stop_k = metric, k
        self.ks = tuple(sorted(set(ks) | {k}))
        if model is None:
            graphs = build_graphs(dataset.train, dataset.user_item, dataset.bundle_item, config)
            model = BundleRecommender(config, graphs)
        self.model = model
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
        self.adam = AdamState()

    @property
    def params(self) -> ParameterSet:
        return self.model.params

    def step(self, batch: TripleBatch) -> BatchLoss:
        loss = batch_loss(self.model, batch)
        grad(loss.total, self.params)
        adam_step(self.params, self.adam, self.config.lr)
        return loss

    def validate(self) -> Optional[MetricsReport]:
        if not self.dataset.tune.nnz:
            return None
        scores = self.model.score_matrix()
        return evaluate_all(scores, self.dataset.tune, [self.dataset.train], self.ks)

    def run_epoch(self, epoch: int) -> EpochRecord:
        started = time.perf_counter()
        sums = np.zeros(3)
        count = 0
        try:
            for batch in epoch_batches(
                self.dataset.train, self.config.batch_size, self.rng, self.config.negatives
            ):
                loss = self.step(batch)
                sums += (loss.total.item(), loss.bpr.item(), loss.contrastive.item())
                count += 1
        except NumericalError as ex:
            raise DivergenceError(f"epoch {epoch}: {ex}") from ex
        means = sums / max(count, 1)
        if not np.all(np.isfinite(means)):
            raise DivergenceError(f"epoch {epoch}: loss is {means[0]}")
        return EpochRecord(epoch, *(float(v) for v in means), time.perf_counter() - started)

    def fit(self) -> Tuple[ParameterSet, TrainHistory]:
        c = self.config
        history = TrainHistory()
        best = self.params.snapshot()
        stale = 0
        stream = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            stream = (self.out_dir / METRICS_FILE).open("w", encoding="utf8")
        try:
            for epoch in range(1, c.epochs + 1):
                record = self.run_epoch(epoch)
                if epoch % c.eval_every == 0 or epoch == c.epochs:
                    record.metrics = self.validate()
                history.append(record)
                if stream:
                    stream.write(json.dumps(record.to_dict()) + "\n")
                    stream.flush()
                message = f"epoch {epoch}: loss {record.loss:.6f} bpr {record.bpr:.6f}"
                if record.metrics is None:
                    self.log(message)
                    continue
                value = record.metrics.get(self.stop_metric, self.stop_k)
                self.log(f"{message} {self.stop_metric}@{self.stop_k} {value:.4f}")
                if history.best_score is None or value > history.best_score:
                    history.best_score, history.best_epoch = value, epoch
                    best = self.params.snapshot()
                    stale = 0
                    self._save()
                else:
                    stale += 1
                    if stale >= c.patience:
                        self.log(f"no improvement for {stale} validations, stopping")
                        history.stopped_early = True
                        break
        finally:
            if stream:
                stream.close()
        if history.best_epoch is None:
            warning("no validation ran, keeping the last parameters")
            best = self.params.snapshot()
            history.best_epoch = history.records[-1].epoch
            self._save()
        self.params.restore(best)
        return self.params, history

    def _save(self):
        if self.checkpoint:
            save_checkpoint(self.params, self.checkpoint)


def fit(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: Optional[PathLike] = None,
    ks: Sequence[int] = DEFAULT_KS,
    checkpoint: Optional[PathLike] = None,
) -> Tuple[ParameterSet, TrainHistory]:
    return Trainer(config, dataset, out_dir, ks, checkpoint=checkpoint).fit()


def full_batch(x: SparseBinaryMatrix, seed: int = 0) -> TripleBatch:
    """Every training interaction once, with seeded negatives."""
    rng = np.random.default_rng(seed)
    return _triples(x, np.arange(x.nnz), rng, 1)


def gradcheck_loss(
    model: BundleRecommender,
    batch: TripleBatch,
    h: float = 1e-5,
    tol: float = 1e-4,
    sample: int = 128,
) -> GradcheckReport:
    """Finite-difference check of the full training loss on one fixed batch."""
    return gradcheck(
        lambda: batch_loss(model, batch).total, model.params, h=h, tol=tol, sample=sample
    )
