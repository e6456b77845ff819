import numpy as np
import pytest

from bunca.autograd import ParameterSet, ShapeError, Tensor
from bunca import autograd as ag
from bunca.config import ConfigError
from bunca.enums import Side
from bunca.gradcheck import gradcheck
from bunca.graph import (
    SparseBinaryMatrix,
    binarize,
    build_unified_graph,
    cooccurrence,
    symmetric_normalize,
)
from bunca.models.cohesive import (
    CohesiveConfig,
    aggregate_layers,
    cohesive_view,
    propagate,
    propagate_unified,
    sum_layers,
)
from tests.helpers import dense_power_sum, random_binary


def _unified(x):
    return build_unified_graph(
        x, binarize(cooccurrence(x, Side.ROWS)), binarize(cooccurrence(x, Side.COLS))
    )


def _single_edge():
    x = SparseBinaryMatrix.from_pairs([0], [0], 1, 1)
    empty = SparseBinaryMatrix.empty(1, 1)
    return build_unified_graph(x, empty, empty)


def test_zero_layers_is_identity(rng):
    graph = _unified(random_binary(rng, 4, 3, 0.5))
    x = Tensor(rng.normal(size=(7, 2)))
    layers = propagate(x, graph.adjacency, 0)
    assert len(layers) == 1
    assert sum_layers(layers) is x


def test_single_edge_moves_features_across():
    graph = _single_edge()
    layers = propagate_unified(Tensor([[0.0, 0.0]]), Tensor([[2.0, 0.0]]), graph, 1)
    assert np.array_equal(layers[1].values, [[2.0, 0.0], [0.0, 0.0]])


def test_isolated_node_gets_zero_row():
    x = SparseBinaryMatrix.from_pairs([0], [0], 2, 1)
    graph = _unified(x)
    layers = propagate_unified(Tensor(np.ones((2, 2))), Tensor(np.ones((1, 2))), graph, 1)
    assert np.array_equal(layers[1].values[1], [0.0, 0.0])


def test_two_layers_of_ones_sum_to_twos():
    ones = Tensor(np.ones((3, 2)))
    assert np.array_equal(sum_layers([ones, ones]).values, np.full((3, 2), 2.0))


@pytest.mark.parametrize("H", [1, 2, 3])
def test_matches_dense_power_oracle(rng, H):
    x = random_binary(rng, 6, 4, 0.4)
    graph = _unified(x)
    T_U, T_B = Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(4, 3)))
    users, bundles = cohesive_view(T_U, T_B, graph, H)
    dense = dense_power_sum(
        graph.adjacency.matrix.toarray(), np.vstack([T_U.values, T_B.values]), H
    )
    assert np.allclose(users.values, dense[:6], atol=1e-10)
    assert np.allclose(bundles.values, dense[6:], atol=1e-10)


def test_propagation_is_linear(rng):
    adj = symmetric_normalize(binarize(cooccurrence(random_binary(rng, 8, 5, 0.5), Side.COLS)))
    a, b = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    out = lambda v: sum_layers(propagate(Tensor(v), adj, 2)).values  # noqa: E731
    assert np.allclose(out(2.0 * a + b), 2.0 * out(a) + out(b), atol=1e-12)


def test_aggregate_layers_splits_users_from_bundles():
    layers = [Tensor(np.arange(6.0).reshape(3, 2))]
    users, bundles = aggregate_layers(layers, 2)
    assert users.shape == (2, 2)
    assert np.array_equal(bundles.values, [[4.0, 5.0]])


def test_cohesive_gradients(rng):
    graph = _unified(random_binary(rng, 5, 4, 0.5))
    params = ParameterSet()
    T_U = params.register("T_U", Tensor(rng.normal(size=(5, 3))))
    T_B = params.register("T_B", Tensor(rng.normal(size=(4, 3))))

    def loss():
        users, bundles = cohesive_view(T_U, T_B, graph, 2)
        return ag.add(ag.sq_norm(users), ag.total(bundles))

    assert gradcheck(loss, params, tol=1e-6).passed


def test_depth_is_bounded():
    with pytest.raises(ConfigError):
        CohesiveConfig(9)
    with pytest.raises(ConfigError):
        propagate_unified(Tensor([[0.0]]), Tensor([[0.0]]), _single_edge(), -1)


def test_embedding_rows_must_match_graph():
    with pytest.raises(ShapeError):
        propagate_unified(Tensor(np.ones((2, 2))), Tensor(np.ones((1, 2))), _single_edge(), 1)
    with pytest.raises(ShapeError):
        propagate_unified(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))), _single_edge(), 1)
