"""Finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from bunca import BuncaError
from bunca.autograd import ParameterSet, Tensor, grad
from bunca.log import debug


class GradcheckError(BuncaError):
    """Raised when the loss cannot be checked, e.g. it is not deterministic."""


@dataclass
class ParameterCheck:
    name: str
    max_relative_error: float
    coordinates: int
    worst_index: tuple


@dataclass
class GradcheckReport:
    tolerance: float
    step: float
    parameters: Dict[str, ParameterCheck] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max((p.max_relative_error for p in self.parameters.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_relative_error": self.max_relative_error,
            "tolerance": self.tolerance,
            "step": self.step,
            "parameters": {
                name: {
                    "max_relative_error": p.max_relative_error,
                    "coordinates": p.coordinates,
                    "worst_index": list(p.worst_index),
                }
                for name, p in self.parameters.items()
            },
        }


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: ParameterSet,
    h: float = 1e-5,
    tol: float = 1e-6,
    sample: int = 128,
    floor: float = 1e-6,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients against central differences.

    Tensors with more than ``sample`` entries are checked on a random subset of
    ``sample`` coordinates. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    for name, t in params.items():
        if t.dtype != np.float64:
            raise GradcheckError(f"{name} is {t.dtype}, gradcheck needs float64")

    params.zero_grad()
    loss = loss_fn()
    baseline = loss.item()
    analytic = grad(loss, params)
    analytic = {name: g.copy() for name, g in analytic.items()}
    params.zero_grad()
    if loss_fn().item() != baseline:
        raise GradcheckError("loss function is not deterministic")

    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tol, step=h)
    for name, t in params.items():
        size = t.values.size
        if size <= sample:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=sample, replace=False))
        worst, worst_index = 0.0, ()
        for flat in coords:
            index = np.unravel_index(flat, t.shape)
            original = t.values[index]
            t.values[index] = original + h
            plus = loss_fn().item()
            t.values[index] = original - h
            minus = loss_fn().item()
            t.values[index] = original
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[name][index]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > worst or not worst_index:
                worst, worst_index = rel, tuple(int(i) for i in index)
        report.parameters[name] = ParameterCheck(name, float(worst), len(coords), worst_index)
        debug(f"gradcheck {name}: max relative error {worst:.3e} over {len(coords)} coords")
    return report
