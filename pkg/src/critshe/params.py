"""Parameter records and the Monte Carlo result carrier."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import DomainError

METHOD_TAGS = ("fk-mc", "fourier-quad", "fourier-mc", "lattice",
               "real-space-mc", "closed-form", "simplex-mc")


def critical_kappa(d: int) -> float:
    """Upper end (d-2)/2 of the admissible coupling range."""
    return (d - 2) / 2


@dataclass(frozen=True)
class ModelParams:
    """Dimension, coupling, time and ball radius of one model evaluation."""

    d: int = 3
    kappa: float = 0.4
    t: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise DomainError(f"dimension d must be an integer >= 3, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        kc = critical_kappa(self.d)
        if not (0.0 < self.kappa < kc):
            raise DomainError(
                f"coupling kappa={self.kappa} violates the model constraint "
                f"0 < kappa < (d-2)/2 = {kc} for d={self.d}")
        if not (self.t > 0 and math.isfinite(self.t)):
            raise DomainError(f"time t must be positive and finite, got {self.t}")
        if not (self.R > 0 and math.isfinite(self.R)):
            raise DomainError(f"radius R must be positive and finite, got {self.R}")

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the oscillatory Bessel quadrature."""

    abs_tol: float = 1e-14
    rel_tol: float = 1e-10
    max_subdivisions: int = 4000
    tail_zero_blocks: int = 16

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be >= 1")
        if self.tail_zero_blocks < 4:
            raise DomainError("tail_zero_blocks must be >= 4")


@dataclass(frozen=True)
class Estimate:
    """A value with its standard error and provenance.

    ``seed`` is the root seed and ``stream`` the estimator key that the
    random stream was derived from; together they reproduce the draw.
    ``reliable`` is cleared by estimators whose own diagnostics fail.
    """

    value: float
    stderr: float
    n_samples: int
    method: str
    seed: int | None = None
    stream: str = ""
    reliable: bool = True
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise DomainError(f"stderr must be >= 0, got {self.stderr}")
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")
        if self.method not in METHOD_TAGS:
            raise DomainError(f"unknown method tag {self.method!r}")

    @property
    def rel_stderr(self) -> float:
        return self.stderr / abs(self.value) if self.value else math.inf

    def z_score(self, other: "Estimate | float") -> float:
        """Difference in units of the combined standard error."""
        if isinstance(other, Estimate):
            v, s = other.value, other.stderr
        else:
            v, s = float(other), 0.0
        comb = math.hypot(self.stderr, s)
        diff = self.value - v
        if comb == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / comb

    def agrees_with(self, other: "Estimate | float", n_sigma: float = 3.0) -> bool:
        return abs(self.z_score(other)) <= n_sigma

    def scaled(self, factor: float) -> "Estimate":
        return replace(self, value=self.value * factor,
                       stderr=self.stderr * abs(factor))

    def as_row(self, name: str) -> dict:
        return {"name": name, "value": self.value, "stderr": self.stderr,
                "n_samples": self.n_samples, "method": self.method,
                "seed": "" if self.seed is None else f"{self.seed}:{self.stream}"}
