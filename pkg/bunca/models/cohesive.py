"""Cohesive view: parameter-free propagation over the unified user-bundle graph."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from bunca import autograd as ag
from bunca.autograd import ShapeError, Tensor
from bunca.config import ConfigError
from bunca.enums import MAX_LAYERS
from bunca.graph import NormalizedAdjacency, UnifiedGraph


@dataclass(frozen=True)
class CohesiveConfig:
    H: int = 2

    def __post_init__(self):
        if not 0 <= self.H <= MAX_LAYERS:
            raise ConfigError(f"H must lie in [0, {MAX_LAYERS}], got {self.H}")


def propagate(x0: Tensor, adjacency: NormalizedAdjacency, H: int) -> List[Tensor]:
    """Layers ``[x0, A x0, ..., A^H x0]``; no self loops, no transforms."""
    if x0.shape[0] != adjacency.n:
        raise ShapeError(f"{x0.shape[0]} feature rows for a graph of {adjacency.n} nodes")
    layers = [x0]
    for _ in range(H):
        layers.append(ag.spmm(adjacency, layers[-1]))
    return layers


def sum_layers(layers: Sequence[Tensor]) -> Tensor:
    if not layers:
        raise ShapeError("cannot aggregate an empty layer list")
    out = layers[0]
    for layer in layers[1:]:
        out = ag.add(out, layer)
    return out


def propagate_unified(T_U: Tensor, T_B: Tensor, graph: UnifiedGraph, H: int) -> List[Tensor]:
    CohesiveConfig(H)
    if T_U.shape[0] != graph.n_users or T_B.shape[0] != graph.n_bundles:
        raise ShapeError(
            f"embeddings have {T_U.shape[0]} users and {T_B.shape[0]} bundles, "
            f"graph has {graph.n_users} and {graph.n_bundles}"
        )
    if T_U.shape[1] != T_B.shape[1]:
        raise ShapeError(f"user width {T_U.shape[1]} != bundle width {T_B.shape[1]}")
    return propagate(ag.stack_rows(T_U, T_B), graph.adjacency, H)


def aggregate_layers(layers: Sequence[Tensor], n_users: int) -> Tuple[Tensor, Tensor]:
    """Sum all layers, layer 0 included, and split into user and bundle blocks."""
    out = sum_layers(layers)
    return ag.slice_rows(out, 0, n_users), ag.slice_rows(out, n_users, out.shape[0])


def cohesive_view(
    T_U: Tensor, T_B: Tensor, graph: UnifiedGraph, H: int
) -> Tuple[Tensor, Tensor]:
    return aggregate_layers(propagate_unified(T_U, T_B, graph, H), graph.n_users)
