import functools
import json
import sys
from pathlib import Path

import click

from bunca import BuncaError
from bunca.autograd import NumericalError, ShapeError
from bunca.causation import export_causation
from bunca.checkpoint import CheckpointError, load_checkpoint
from bunca.config import ConfigError, RunConfig
from bunca.dataset import (
    DatasetError,
    dataset_stats,
    high_influence_distribution,
    load_dataset,
)
from bunca.enums import CONFIG_DUMP_FILE, Popularity
from bunca.gradcheck import GradcheckError
from bunca.graph import GraphError
from bunca.log import add_file_sink, error, info
from bunca.models.recommender import BundleRecommender, build_graphs
from bunca.objectives import ObjectiveError
from bunca.service.evaluator import EvaluationError, Evaluator, masks_for
from bunca.service.trainer import (
    DivergenceError,
    SamplingError,
    Trainer,
    full_batch,
    gradcheck_loss,
)
from bunca.synth import SynthSpec, synth_generate, toy_dataset

EXIT_CODES = (
    (ConfigError, 2),
    (ObjectiveError, 2),
    (DatasetError, 3),
    (CheckpointError, 3),
    (GraphError, 3),
    (ShapeError, 3),
    (SamplingError, 3),
    (EvaluationError, 3),
    (DivergenceError, 4),
    (NumericalError, 4),
    (GradcheckError, 4),
)


def exit_code(ex: BuncaError) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(ex, kind):
            return code
    return 1


def handles_errors(fn):
    """Turn package errors into a red message and the matching exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BuncaError as ex:
            error(f"{type(ex).__name__}: {ex}")
            sys.exit(exit_code(ex))

    return wrapper


def _overrides(pairs, **flags):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    out.update({k: str(v) for k, v in flags.items() if v is not None})
    return out


def _config(config_path, pairs, **flags) -> RunConfig:
    return RunConfig.load(config_path, _overrides(pairs, **flags))


def _checkpoint_config(config_path, checkpoint, pairs, **flags) -> RunConfig:
    """Prefer an explicit config, then the dump written next to the checkpoint."""
    if not config_path and checkpoint:
        dumped = Path(checkpoint).parent / CONFIG_DUMP_FILE
        if dumped.exists():
            config_path = dumped
    return _config(config_path, pairs, checkpoint=checkpoint, **flags)


def _trained_model(cfg: RunConfig):
    cfg.require("dataset_dir")
    ds = load_dataset(cfg.dataset_dir)
    model = BundleRecommender(cfg, build_graphs(ds.train, ds.user_item, ds.bundle_item, cfg))
    load_checkpoint(cfg.checkpoint_path, model.params)
    return ds, model


config_option = click.option(
    "--config", "config_path", type=click.Path(), help="key = value config file"
)
set_option = click.option(
    "--set", "pairs", multiple=True, metavar="KEY=VALUE", help="override a config key"
)
dataset_option = click.option("--dataset-dir", help="dataset directory")
checkpoint_option = click.option("--checkpoint", help="checkpoint file")
mask_tune_option = click.option(
    "--mask-tune/--no-mask-tune", default=None, help="hide tune interactions too"
)


@click.group()
def cli():
    """Bundle recommendation with cohesive and coherent views."""


@cli.command()
@config_option
@set_option
@dataset_option
@click.option("--out-dir", help="where checkpoint and metrics go")
@click.option("--lr", type=float)
@click.option("--epochs", type=int)
@click.option("--seed", type=int)
@handles_errors
def train(config_path, pairs, dataset_dir, out_dir, lr, epochs, seed):
    """Train a model and report test metrics of the best checkpoint."""
    cfg = _config(
        config_path,
        pairs,
        dataset_dir=dataset_dir,
        out_dir=out_dir,
        lr=lr,
        epochs=epochs,
        seed=seed,
    )
    cfg.require("dataset_dir", "out_dir")
    ds = load_dataset(cfg.dataset_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    add_file_sink(out)
    (out / CONFIG_DUMP_FILE).write_text(cfg.dump(), encoding="utf8")
    trainer = Trainer(cfg, ds, out, cfg.ks, checkpoint=cfg.checkpoint_path)
    _, history = trainer.fit()
    info(f"best epoch {history.best_epoch} of {len(history)}")
    if ds.test.nnz:
        evaluator = Evaluator(trainer.model.score_matrix(), masks_for(ds, "test", cfg.mask_tune))
        click.echo(evaluator.evaluate(ds.test, cfg.ks).to_json())


@cli.command()
@config_option
@set_option
@dataset_option
@checkpoint_option
@click.option("--ks", help="comma separated cut-offs, e.g. 10,20")
@mask_tune_option
@handles_errors
def evaluate(config_path, pairs, dataset_dir, checkpoint, ks, mask_tune):
    """Print Recall@K and NDCG@K on the test split as JSON."""
    cfg = _checkpoint_config(
        config_path, checkpoint, pairs, dataset_dir=dataset_dir, ks=ks, mask_tune=mask_tune
    )
    ds, model = _trained_model(cfg)
    evaluator = Evaluator(model.score_matrix(), masks_for(ds, "test", cfg.mask_tune))
    click.echo(evaluator.evaluate(ds.test, cfg.ks).to_json())


@cli.command()
@config_option
@set_option
@dataset_option
@checkpoint_option
@click.option("--user", "users", type=int, multiple=True, required=True)
@click.option("-k", "--k", "k", type=int, default=10, show_default=True)
@mask_tune_option
@handles_errors
def recommend(config_path, pairs, dataset_dir, checkpoint, users, k, mask_tune):
    """Top-K unseen bundles per user, one ``user<TAB>b1,b2,...`` line each."""
    cfg = _checkpoint_config(
        config_path, checkpoint, pairs, dataset_dir=dataset_dir, mask_tune=mask_tune
    )
    ds, model = _trained_model(cfg)
    evaluator = Evaluator(model.score_matrix(), masks_for(ds, "test", cfg.mask_tune))
    for user in users:
        top = evaluator.recommend(user, k)
        click.echo(f"{user}\t{','.join(str(b) for b in top)}")


@cli.command()
@click.option("--dataset-dir", required=True)
@click.option(
    "--popularity",
    type=click.Choice([p.value for p in Popularity]),
    default=Popularity.USER.value,
    show_default=True,
)
@handles_errors
def stats(dataset_dir, popularity):
    """Dataset statistics and the high-influence item histogram as JSON."""
    ds = load_dataset(dataset_dir)
    out = dataset_stats(ds).to_dict()
    out["popularity"] = popularity
    histogram = high_influence_distribution(ds, Popularity(popularity))
    out["high_influence"] = {str(k): v for k, v in histogram.items()}
    click.echo(json.dumps(out))


@cli.command()
@click.option("--out-dir", required=True)
@click.option("--groups", type=int, default=4, show_default=True)
@click.option("--users-per-group", type=int, default=12, show_default=True)
@click.option("--bundles-per-group", type=int, default=8, show_default=True)
@click.option("--items-per-group", type=int, default=10, show_default=True)
@click.option("--noise", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handles_errors
def synth(out_dir, groups, users_per_group, bundles_per_group, items_per_group, noise, seed):
    """Write a planted-structure dataset."""
    spec = SynthSpec(groups, users_per_group, bundles_per_group, items_per_group, noise, seed)
    ds = synth_generate(spec, out_dir)
    click.echo(dataset_stats(ds).to_json())


@cli.command()
@set_option
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--step", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handles_errors
def gradcheck(pairs, tol, step, seed):
    """Check analytic gradients of the training loss on a built-in toy instance."""
    overrides = dict(d="4", L="2", H="2", H_sub="1", dtype="float64", seed=str(seed))
    overrides.update(_overrides(pairs))
    cfg = RunConfig.load(None, overrides, environ={})
    ds = toy_dataset()
    model = BundleRecommender(cfg, build_graphs(ds.train, ds.user_item, ds.bundle_item, cfg))
    report = gradcheck_loss(model, full_batch(ds.train, seed), h=step, tol=tol)
    info(f"max relative error {report.max_relative_error:.3e} (tolerance {tol:g})")
    click.echo(json.dumps(report.to_dict()))
    if not report.passed:
        raise GradcheckError(
            f"max relative error {report.max_relative_error:.3e} exceeds {tol:g}"
        )


@cli.command("export-causation")
@config_option
@set_option
@dataset_option
@checkpoint_option
@click.option("--output", required=True, type=click.Path(), help="edge list to write")
@click.option("--top-n", type=int, default=5, show_default=True)
@handles_errors
def export_causation_cmd(config_path, pairs, dataset_dir, checkpoint, output, top_n):
    """Write the heaviest incoming causation edges of every item."""
    cfg = _checkpoint_config(config_path, checkpoint, pairs, dataset_dir=dataset_dir)
    _, model = _trained_model(cfg)
    info(f"causation edges written to {export_causation(model, output, top_n)}")


def main():
    cli()


if __name__ == "__main__":
    main()
