"""Parameter initialization and the Adam update."""

from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np

from bunca import BuncaError
from bunca.autograd import ParameterSet, ShapeError, Tensor
from bunca.enums import ADAM_BETA1, ADAM_BETA2, ADAM_EPS

Seed = Union[int, np.random.Generator]


class OptimizerError(BuncaError):
    """Raised when an update is requested without gradients."""


def rng_from(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def xavier_init(rows: int, cols: int, seed: Seed, dtype=np.float64) -> Tensor:
    """Uniform entries in +-sqrt(6 / (rows + cols)), reproducible from ``seed``."""
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"xavier_init needs positive dimensions, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    values = rng_from(seed).uniform(-bound, bound, size=(rows, cols))
    return Tensor(values.astype(dtype), requires_grad=True)


@dataclass
class AdamState:
    """First and second moment accumulators per parameter name."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParameterSet,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
):
    """Apply one bias-corrected Adam update in place, then clear gradients."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise OptimizerError(f"no gradient for {', '.join(missing)}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, t in params.items():
        g = t.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.values)
            v = np.zeros_like(t.values)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        t.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.zero_grad()
