"""Builders shared by the unit tests."""

import numpy as np

from bunca.autograd import ParameterSet, Tensor
from bunca.config import RunConfig
from bunca.graph import SparseBinaryMatrix
from bunca.models.recommender import BundleRecommender, build_graphs


def small_config(**overrides) -> RunConfig:
    """Tiny model settings for the 6-user toy instance."""
    values = dict(d=4, L=2, H=2, H_sub=1, batch_size=4, epochs=1, seed=0)
    values.update(overrides)
    return RunConfig(**values)


def make_model(ds, **overrides) -> BundleRecommender:
    cfg = small_config(**overrides)
    return BundleRecommender(cfg, build_graphs(ds.train, ds.user_item, ds.bundle_item, cfg))


def random_binary(rng, n_rows, n_cols, density=0.3) -> SparseBinaryMatrix:
    return SparseBinaryMatrix.from_dense(rng.random((n_rows, n_cols)) < density)


def random_params(rng, **shapes) -> ParameterSet:
    params = ParameterSet()
    for name, shape in shapes.items():
        params.register(name, Tensor(rng.normal(size=shape)))
    return params


def dense_power_sum(adjacency: np.ndarray, x0: np.ndarray, H: int) -> np.ndarray:
    out, layer = x0.copy(), x0
    for _ in range(H):
        layer = adjacency @ layer
        out = out + layer
    return out


def dense_mean_pool(incidence: np.ndarray, x: np.ndarray) -> np.ndarray:
    deg = incidence.sum(axis=1, keepdims=True)
    pooled = incidence @ x
    return np.divide(pooled, deg, out=np.zeros_like(pooled), where=deg > 0)
