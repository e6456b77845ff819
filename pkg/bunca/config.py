"""Run configuration: line-based ``key = value`` text.

Precedence, lowest first: dataclass defaults, the config file, ``BUNCA_<KEY>``
environment variables (a ``.env`` file is honoured), then command-line
overrides.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from bunca import BuncaError
from bunca.enums import (
    CAUSATION_EPS,
    CHECKPOINT_FILE,
    DEFAULT_KS,
    LEAKY_SLOPE,
    MAX_LAYERS,
    Causation,
)
from bunca.objectives import HyperParams

ENV_PREFIX = "BUNCA_"

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


class ConfigError(BuncaError):
    """Raised on unknown keys, unparsable values or out-of-range settings."""


@dataclass(frozen=True)
class TrainConfig:
    """Model and optimisation settings of one training run."""

    d: int = 64
    H: int = 2
    H_sub: int = 1
    L: int = 2
    alpha: float = 0.5
    beta: float = 0.8
    gamma: float = 0.5
    mu: float = 1.0
    tau: float = 0.25
    lambda1: float = 0.1
    lambda2: float = 1e-5
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    eval_every: int = 1
    patience: int = 10
    seed: int = 0
    negatives: int = 1
    reg_batch_only: bool = False
    dtype: str = "float64"
    # co-occurrence thresholds: users and bundles (cohesive), items per sub-view
    theta_u: int = 1
    theta_b: int = 1
    theta_up: int = 1
    theta_bc: int = 1
    eps: float = CAUSATION_EPS
    slope: float = LEAKY_SLOPE
    # ablations
    use_sv: bool = True
    use_rv: bool = True
    use_up: bool = True
    use_bc: bool = True
    use_dc: bool = True
    use_cc: bool = True
    causation_up: str = Causation.LEARNED.value
    causation_bc: str = Causation.LEARNED.value

    def __post_init__(self):
        self.validate()

    def validate(self):
        def check(ok, message):
            if not ok:
                raise ConfigError(message)

        check(self.d >= 1, f"d must be >= 1, got {self.d}")
        check(0 <= self.H <= MAX_LAYERS, f"H must lie in [0, {MAX_LAYERS}], got {self.H}")
        check(
            0 <= self.H_sub <= MAX_LAYERS,
            f"H_sub must lie in [0, {MAX_LAYERS}], got {self.H_sub}",
        )
        check(self.L >= 1, f"L must be >= 1, got {self.L}")
        for name in ("alpha", "beta", "gamma", "mu"):
            value = getattr(self, name)
            check(0.0 <= value <= 1.0, f"{name} must lie in [0, 1], got {value}")
        check(self.tau > 0, f"tau must be positive, got {self.tau}")
        check(self.lambda1 >= 0, f"lambda1 must be >= 0, got {self.lambda1}")
        check(self.lambda2 >= 0, f"lambda2 must be >= 0, got {self.lambda2}")
        check(self.lr > 0, f"lr must be positive, got {self.lr}")
        check(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        check(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        check(self.eval_every >= 1, f"eval_every must be >= 1, got {self.eval_every}")
        check(self.patience >= 1, f"patience must be >= 1, got {self.patience}")
        check(self.negatives >= 1, f"negatives must be >= 1, got {self.negatives}")
        check(self.eps > 0, f"eps must be positive, got {self.eps}")
        check(self.slope >= 0, f"slope must be >= 0, got {self.slope}")
        check(
            self.dtype in ("float64", "float32"),
            f"dtype must be float64 or float32, got {self.dtype}",
        )
        for name in ("theta_u", "theta_b", "theta_up", "theta_bc"):
            value = getattr(self, name)
            check(value >= 1, f"{name} must be >= 1, got {value}")
        check(self.use_sv or self.use_rv, "at least one of use_sv, use_rv must be true")
        for name in ("causation_up", "causation_bc"):
            value = getattr(self, name)
            allowed = [c.value for c in Causation]
            check(value in allowed, f"{name} must be one of {allowed}, got {value}")

    @property
    def rv_enabled(self) -> bool:
        return self.use_rv and (self.use_up or self.use_bc)

    @property
    def effective_beta(self) -> float:
        if not self.use_up:
            return 1.0
        if not self.use_bc:
            return 0.0
        return self.beta

    @property
    def effective_gamma(self) -> float:
        if not self.use_dc or not (self.use_sv and self.rv_enabled):
            return 0.0
        if not self.use_cc:
            return 1.0
        return self.gamma

    @property
    def hyper_params(self) -> HyperParams:
        """Loss weights with the contrastive ablations applied to gamma."""
        return HyperParams(self.tau, self.effective_gamma, self.mu, self.lambda1, self.lambda2)


@dataclass(frozen=True)
class RunConfig(TrainConfig):
    """Training settings plus where data comes from and results go."""

    dataset_dir: str = ""
    out_dir: str = "out"
    checkpoint: str = ""
    ks: Tuple[int, ...] = field(default=DEFAULT_KS)
    mask_tune: bool = True

    def validate(self):
        super().validate()
        if not self.ks or any(k <= 0 for k in self.ks):
            raise ConfigError(f"ks must be positive integers, got {self.ks}")

    def require(self, *keys: str):
        for key in keys:
            if not getattr(self, key):
                raise ConfigError(f"missing required key {key}")
        return self

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / CHECKPOINT_FILE

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def dump(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def override(self, values: Mapping[str, str]) -> "RunConfig":
        return replace(self, **_coerce_all(values))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls(**_coerce_all(parse_lines(text, source)))

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, str]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "RunConfig":
        raw: Dict[str, str] = {}
        if path:
            path = Path(path)
            try:
                text = path.read_text(encoding="utf8")
            except OSError as ex:
                raise ConfigError(f"cannot read config {path}: {ex}") from ex
            raw.update(parse_lines(text, str(path)))
        raw.update(env_overrides(os.environ if environ is None else environ))
        raw.update(overrides or {})
        return cls(**_coerce_all(raw))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_lines(text: str, source: str = "<config>") -> Dict[str, str]:
    """Split ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key}")
        raw[key] = value
    return raw


def env_overrides(environ: Mapping[str, str]) -> Dict[str, str]:
    out = {}
    for key in _TYPES:
        value = environ.get(ENV_PREFIX + key.upper())
        if value is not None:
            out[key] = value
    return out


def parse_ks(value: str) -> Tuple[int, ...]:
    try:
        return tuple(int(k) for k in str(value).split(",") if k.strip())
    except ValueError as ex:
        raise ConfigError(f"ks must be a comma separated list of integers, got {value!r}") from ex


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key}")
    kind = _TYPES[key]
    if not isinstance(value, str):
        return tuple(value) if key == "ks" else value
    try:
        if key == "ks":
            return parse_ks(value)
        if kind is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError as ex:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from ex


def _coerce_all(raw: Mapping[str, str]) -> Dict[str, object]:
    return {key: _coerce(key, value) for key, value in raw.items()}


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
