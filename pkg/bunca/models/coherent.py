"""Coherent view: item-item causation, item enhancement and the two sub-views.

The causation network scores every stored entry (i, j) of an item co-occurrence
mask, meaning "item j influences item i", once per prospect. Scores are turned
into a row-normalised sparse matrix per prospect and used to enhance item
embeddings, which then feed the user-preference (UP) and bundle-construction
(BC) sub-views. Transforms act on row vectors: ``t @ psi``.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from bunca import autograd as ag
from bunca.autograd import ParameterSet, ShapeError, Tensor
from bunca.config import ConfigError
from bunca.enums import CAUSATION_EPS, LEAKY_SLOPE, Causation, SubView
from bunca.graph import (
    NormalizedAdjacency,
    SparseBinaryMatrix,
    row_normalize,
    symmetric_normalize,
)
from bunca.models.cohesive import propagate, sum_layers
from bunca.optim import Seed, rng_from, xavier_init


@dataclass(frozen=True, eq=False)
class MPCNetParams:
    """Parameters of one causation network; ``p`` is (d, 1), ``phi`` is (1, d)."""

    p: Tuple[Tensor, ...]
    psi_src: Tuple[Tensor, ...]
    psi_dst: Tuple[Tensor, ...]
    phi: Tensor
    alpha: float = 0.5
    eps: float = CAUSATION_EPS
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if not self.p:
            raise ConfigError("a causation network needs at least one prospect")
        if not len(self.p) == len(self.psi_src) == len(self.psi_dst):
            raise ShapeError("per-prospect parameter lists differ in length")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        d = self.d
        for l in range(self.L):
            if self.p[l].shape != (d, 1):
                raise ShapeError(f"prospect {l}: p is {self.p[l].shape}, expected {(d, 1)}")
            for name, psi in (("psi_src", self.psi_src[l]), ("psi_dst", self.psi_dst[l])):
                if psi.shape != (d, d):
                    raise ShapeError(f"prospect {l}: {name} is {psi.shape}, expected {(d, d)}")

    @property
    def L(self) -> int:
        return len(self.p)

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def tensors(self) -> List[Tensor]:
        return [*self.p, *self.psi_src, *self.psi_dst, self.phi]

    @classmethod
    def create(
        cls,
        params: ParameterSet,
        prefix: str,
        d: int,
        L: int,
        seed: Seed,
        alpha: float = 0.5,
        eps: float = CAUSATION_EPS,
        slope: float = LEAKY_SLOPE,
    ) -> "MPCNetParams":
        """Xavier-initialise and register ``{prefix}.p.{l}``, ``{prefix}.psi_src.{l}``,
        ``{prefix}.psi_dst.{l}`` and ``{prefix}.phi``."""
        rng = rng_from(seed)
        p, src, dst = [], [], []
        for l in range(L):
            p.append(params.register(f"{prefix}.p.{l}", xavier_init(d, 1, rng)))
            src.append(params.register(f"{prefix}.psi_src.{l}", xavier_init(d, d, rng)))
            dst.append(params.register(f"{prefix}.psi_dst.{l}", xavier_init(d, d, rng)))
        phi = params.register(f"{prefix}.phi", xavier_init(1, d, rng))
        return cls(tuple(p), tuple(src), tuple(dst), phi, alpha, eps, slope)

    @classmethod
    def from_params(
        cls,
        params: ParameterSet,
        prefix: str,
        alpha: float = 0.5,
        eps: float = CAUSATION_EPS,
        slope: float = LEAKY_SLOPE,
    ) -> "MPCNetParams":
        L = 0
        while f"{prefix}.p.{L}" in params:
            L += 1
        return cls(
            tuple(params[f"{prefix}.p.{l}"] for l in range(L)),
            tuple(params[f"{prefix}.psi_src.{l}"] for l in range(L)),
            tuple(params[f"{prefix}.psi_dst.{l}"] for l in range(L)),
            params[f"{prefix}.phi"],
            alpha,
            eps,
            slope,
        )


@dataclass(frozen=True, eq=False)
class CausationMatrices:
    """One weight column per prospect, aligned with the stored entries of ``mask``."""

    mask: SparseBinaryMatrix
    weights: Tuple[Tensor, ...]

    @property
    def L(self) -> int:
        return len(self.weights)

    def to_csr(self, l: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights[l].values[:, 0], self.mask.col_indices, self.mask.row_offsets),
            shape=self.mask.shape,
        )

    def to_dense(self, l: int) -> np.ndarray:
        return self.to_csr(l).toarray()


@dataclass(frozen=True, eq=False)
class SubViewOutput:
    view: SubView
    users: Tensor
    bundles: Tensor
    items: Tensor


def _check_mask(T_I: Tensor, mask: SparseBinaryMatrix):
    n = T_I.shape[0]
    if mask.shape != (n, n):
        raise ShapeError(f"item mask is {mask.shape}, expected {(n, n)}")


def prospect_scores(
    T_I: Tensor, params: MPCNetParams, mask: SparseBinaryMatrix
) -> List[Tensor]:
    """Per prospect, a (nnz, 1) column of scores r_{j->i} on the mask entries."""
    _check_mask(T_I, mask)
    if T_I.shape[1] != params.d:
        raise ShapeError(f"item width {T_I.shape[1]} != causation width {params.d}")
    dst, src = mask.pairs()
    out = []
    for l in range(params.L):
        from_src = ag.gather_rows(ag.matmul(T_I, params.psi_src[l]), src)
        from_dst = ag.gather_rows(ag.matmul(T_I, params.psi_dst[l]), dst)
        hidden = ag.leaky_relu(ag.add_row(ag.add(from_src, from_dst), params.phi), params.slope)
        out.append(ag.matmul(hidden, params.p[l]))
    return out


def causation_matrix(
    scores: Tensor, mask: SparseBinaryMatrix, eps: float = CAUSATION_EPS
) -> Tensor:
    """Masked row softmax of one prospect's scores; empty rows stay empty."""
    return ag.edge_softmax(scores, mask, eps)


def causation_matrices(
    T_I: Tensor, params: MPCNetParams, mask: SparseBinaryMatrix
) -> CausationMatrices:
    scores = prospect_scores(T_I, params, mask)
    return CausationMatrices(mask, tuple(causation_matrix(s, mask, params.eps) for s in scores))


def fixed_causation(mask: SparseBinaryMatrix, kind: Causation) -> CausationMatrices:
    """Parameter-free stand-ins: uniform rows or ``D^-1/2 C D^-1/2`` on the mask."""
    kind = Causation(kind)
    if kind is Causation.COOCCURRENCE:
        matrix = row_normalize(mask)
    elif kind is Causation.LAPLACIAN:
        matrix = symmetric_normalize(mask).matrix
    else:
        raise ConfigError(f"{kind.value} causation is learned, not fixed")
    return CausationMatrices(mask, (Tensor(np.asarray(matrix.data).reshape(-1, 1)),))


def _residual(mixed: Tensor, T_I: Tensor, alpha: float) -> Tensor:
    return ag.add(ag.scale(mixed, alpha), ag.scale(T_I, 1.0 - alpha))


def enhance_items(T_I: Tensor, causation: CausationMatrices, params: MPCNetParams) -> Tensor:
    """``alpha * mean_l(A^l (T_I psi_src^l)) + (1 - alpha) * T_I``."""
    if causation.L != params.L:
        raise ShapeError(f"{causation.L} causation matrices for {params.L} prospects")
    _check_mask(T_I, causation.mask)
    per_prospect = [
        ag.edge_spmm(causation.weights[l], causation.mask, ag.matmul(T_I, params.psi_src[l]))
        for l in range(params.L)
    ]
    mixed = ag.scale(sum_layers(per_prospect), 1.0 / params.L)
    return _residual(mixed, T_I, params.alpha)


def enhance_items_fixed(T_I: Tensor, causation: CausationMatrices, alpha: float) -> Tensor:
    """Same residual mix, neighbours enter untransformed."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    _check_mask(T_I, causation.mask)
    per_prospect = [
        ag.edge_spmm(w, causation.mask, T_I) for w in causation.weights
    ]
    mixed = ag.scale(sum_layers(per_prospect), 1.0 / causation.L)
    return _residual(mixed, T_I, alpha)


def _run_subview(
    view: SubView,
    T_side: Tensor,
    T_hat_I: Tensor,
    adjacency: NormalizedAdjacency,
    pool_incidence: SparseBinaryMatrix,
    H_sub: int,
) -> Tuple[Tensor, Tensor, Tensor]:
    n_side, n_items = T_side.shape[0], T_hat_I.shape[0]
    if adjacency.n != n_side + n_items:
        raise ShapeError(
            f"{view.value} graph has {adjacency.n} nodes, embeddings cover {n_side + n_items}"
        )
    if pool_incidence.n_cols != n_items:
        raise ShapeError(
            f"{view.value} pooling incidence has {pool_incidence.n_cols} items, expected {n_items}"
        )
    out = sum_layers(propagate(ag.stack_rows(T_side, T_hat_I), adjacency, H_sub))
    side = ag.slice_rows(out, 0, n_side)
    items = ag.slice_rows(out, n_side, n_side + n_items)
    return side, items, ag.mean_pool(pool_incidence, items)


def run_subview_UP(
    T_U: Tensor,
    T_hat_I: Tensor,
    ui_adjacency: NormalizedAdjacency,
    bundle_item: SparseBinaryMatrix,
    H_sub: int,
) -> SubViewOutput:
    """Propagate users and enhanced items, then mean-pool bundles over their items."""
    users, items, bundles = _run_subview(
        SubView.UP, T_U, T_hat_I, ui_adjacency, bundle_item, H_sub
    )
    return SubViewOutput(SubView.UP, users, bundles, items)


def run_subview_BC(
    T_B: Tensor,
    T_hat_I: Tensor,
    bi_adjacency: NormalizedAdjacency,
    user_item: SparseBinaryMatrix,
    H_sub: int,
) -> SubViewOutput:
    """Propagate bundles and enhanced items, then mean-pool users over their items."""
    bundles, items, users = _run_subview(
        SubView.BC, T_B, T_hat_I, bi_adjacency, user_item, H_sub
    )
    return SubViewOutput(SubView.BC, users, bundles, items)


def zero_subview(
    view: SubView, n_users: int, n_bundles: int, n_items: int, d: int, dtype=np.float64
) -> SubViewOutput:
    def zeros(n):
        return Tensor(np.zeros((n, d), dtype=dtype))

    return SubViewOutput(SubView(view), zeros(n_users), zeros(n_bundles), zeros(n_items))


def fuse_coherent(
    up: SubViewOutput, bc: SubViewOutput, beta: float
) -> Tuple[Tensor, Tensor]:
    """``beta * BC + (1 - beta) * UP`` for users and bundles."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    if beta == 1.0:
        return bc.users, bc.bundles
    if beta == 0.0:
        return up.users, up.bundles
    users = ag.add(ag.scale(bc.users, beta), ag.scale(up.users, 1.0 - beta))
    bundles = ag.add(ag.scale(bc.bundles, beta), ag.scale(up.bundles, 1.0 - beta))
    return users, bundles


def mpcnet_for(
    params: ParameterSet, view: SubView, alpha: float, eps: float, slope: float
) -> Optional[MPCNetParams]:
    prefix = SubView(view).value
    if f"{prefix}.phi" not in params:
        return None
    return MPCNetParams.from_params(params, prefix, alpha, eps, slope)
