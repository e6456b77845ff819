"""Contrastive and ranking objectives, fused representations and scoring.

All losses are batch means. Contrastive denominators run over the whole batch,
the anchor's own pair included.
"""

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from bunca import BuncaError
from bunca import autograd as ag
from bunca.autograd import ParameterSet, Tensor


class ObjectiveError(BuncaError):
    """Raised on invalid hyper-parameters or batch shapes."""


@dataclass(frozen=True)
class HyperParams:
    tau: float = 0.25
    gamma: float = 0.5
    mu: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 1e-5

    def __post_init__(self):
        if self.tau <= 0:
            raise ObjectiveError(f"tau must be positive, got {self.tau}")
        for name in ("gamma", "mu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ObjectiveError(f"{name} must lie in [0, 1], got {value}")
        for name in ("lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ObjectiveError(f"{name} must be non-negative")


@dataclass(frozen=True, eq=False)
class TripleBatch:
    """Parallel arrays of (user, interacted bundle, non-interacted bundle)."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        if not len(self.users) == len(self.pos) == len(self.neg):
            raise ObjectiveError("triple arrays differ in length")

    def __len__(self):
        return len(self.users)

    def unique_users(self) -> np.ndarray:
        return _first_appearance(self.users)

    def unique_bundles(self) -> np.ndarray:
        return _first_appearance(np.concatenate([self.pos, self.neg]))

    def positive_bundles(self) -> np.ndarray:
        """Distinct interacted bundles; sampled negatives are left out."""
        return _first_appearance(self.pos)


def _first_appearance(ids: np.ndarray) -> np.ndarray:
    _, first = np.unique(ids, return_index=True)
    return np.asarray(ids)[np.sort(first)]


def _check_tau(tau: float):
    if tau <= 0:
        raise ObjectiveError(f"temperature must be positive, got {tau}")


def discrete_contrastive(sv: Tensor, rv: Tensor, tau: float) -> Tensor:
    """Align each entity's two views against the other in-batch entities."""
    _check_tau(tau)
    if sv.shape != rv.shape or sv.shape[0] < 1:
        raise ObjectiveError(f"view batches {sv.shape} and {rv.shape} do not pair up")
    sim = ag.scale(ag.cosine_matrix(sv, rv), 1.0 / tau)
    return ag.mean(ag.sub(ag.logsumexp_rows(sim), ag.diagonal(sim)))


def concrete_contrastive(fused: Tensor, tau: float) -> Tensor:
    """Tell each fused representation apart from the other in-batch entities.

    The positive term is the constant ``exp(1/tau)``, so the self pair in the
    denominator is exactly the numerator.
    """
    _check_tau(tau)
    n = fused.shape[0]
    if n < 1:
        raise ObjectiveError("concrete contrastive loss needs a nonempty batch")
    off_diagonal = Tensor(1.0 - np.eye(n, dtype=fused.dtype))
    self_term = Tensor(np.eye(n, dtype=fused.dtype) / tau)
    sim = ag.scale(ag.cosine_matrix(fused, fused), 1.0 / tau)
    sim = ag.add(ag.mul(sim, off_diagonal), self_term)
    positive = Tensor(np.full((n, 1), 1.0 / tau, dtype=fused.dtype))
    return ag.mean(ag.sub(ag.logsumexp_rows(sim), positive))


def combine_contrastive(
    dc_users: Tensor, dc_bundles: Tensor, cc_users: Tensor, cc_bundles: Tensor, gamma: float
) -> Tensor:
    if not 0.0 <= gamma <= 1.0:
        raise ObjectiveError(f"gamma must lie in [0, 1], got {gamma}")
    discrete = ag.scale(ag.add(dc_users, dc_bundles), 0.5 * gamma)
    concrete = ag.scale(ag.add(cc_users, cc_bundles), 0.5 * (1.0 - gamma))
    return ag.add(discrete, concrete)


def fuse_multiview(sv: Tensor, rv: Tensor) -> Tensor:
    if sv.shape != rv.shape:
        raise ObjectiveError(f"cannot fuse views of shapes {sv.shape} and {rv.shape}")
    return ag.add(sv, rv)


def final_repr(sv: Tensor, rv: Tensor, mu: float) -> Tensor:
    """``[mu * sv || rv]``, twice the embedding width."""
    if not 0.0 <= mu <= 1.0:
        raise ObjectiveError(f"mu must lie in [0, 1], got {mu}")
    return ag.concat_cols(ag.scale(sv, mu), rv)


def score(users: Tensor, bundles: Tensor) -> Tensor:
    """Inner product of matching rows."""
    return ag.row_dot(users, bundles)


def bpr_loss(pos: Tensor, neg: Tensor) -> Tensor:
    """Mean of ``-ln sigmoid(pos - neg)``, via softplus."""
    if pos.shape != neg.shape or pos.shape[0] < 1:
        raise ObjectiveError(f"score arrays {pos.shape} and {neg.shape} do not pair up")
    return ag.mean(ag.softplus(ag.sub(neg, pos)))


def l2_penalty(tensors: Iterable[Tensor]) -> Tensor:
    terms = [ag.sq_norm(t) for t in tensors]
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for term in terms[1:]:
        out = ag.add(out, term)
    return out


def total_loss(
    bpr: Tensor,
    contrastive: Tensor,
    theta: Union[ParameterSet, Iterable[Tensor]],
    lambda1: float,
    lambda2: float,
) -> Tensor:
    """``bpr + lambda1 * contrastive + lambda2 * ||theta||^2``."""
    if lambda1 < 0 or lambda2 < 0:
        raise ObjectiveError("loss weights must be non-negative")
    out = ag.add(bpr, ag.scale(contrastive, lambda1))
    return ag.add(out, ag.scale(l2_penalty(theta), lambda2))
