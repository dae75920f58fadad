"""Homophily functions, Weibull retention kernels and shared validation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Raised when a model parameter violates its admissible range."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


class NodeType(enum.IntEnum):
    A = 0
    B = 1


def similar(u: NodeType, v: NodeType) -> bool:
    return u == v


class Family(str, enum.Enum):
    POWER = "power"
    LOG = "log"
    # test hook only, bypasses validation (see HomophilyFunction.unchecked_constant)
    CONSTANT = "constant"


@dataclass(frozen=True)
class HomophilyFunction:
    """Probability of forming a similar tie given the dissimilar-edge fraction.

    ``power``: f(x) = x**alpha with alpha in (0, 1).
    ``log``:   f(x) = ln(1 + a*x) / ln(1 + a) with a > 0.

    Both are strictly increasing, strictly concave and satisfy f(1) = 1.
    Instances are callable on floats and numpy arrays.
    """

    family: Family = Family.POWER
    alpha: float = 0.5
    a: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.POWER:
            if not (0.0 < self.alpha < 1.0):
                raise ParameterError(
                    f"power homophily needs alpha in (0, 1), got {self.alpha}"
                )
        elif self.family is Family.LOG:
            if not (self.a > 0.0 and math.isfinite(self.a)):
                raise ParameterError(f"log homophily needs a > 0, got {self.a}")
        else:
            raise ParameterError("constant homophily is a test hook; use unchecked_constant")

    @classmethod
    def power(cls, alpha: float = 0.5) -> "HomophilyFunction":
        return cls(Family.POWER, alpha=alpha)

    @classmethod
    def log(cls, a: float = 3.0) -> "HomophilyFunction":
        return cls(Family.LOG, a=a)

    @classmethod
    def unchecked_constant(cls, value: float) -> "HomophilyFunction":
        """Constant f, skipping every validation. For boundary tests of the engines."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "family", Family.CONSTANT)
        object.__setattr__(obj, "alpha", float(value))
        object.__setattr__(obj, "a", 0.0)
        return obj

    def __call__(self, x):
        if self.family is Family.POWER:
            return np.power(x, self.alpha) if isinstance(x, np.ndarray) else x**self.alpha
        if self.family is Family.LOG:
            # pin f(1) = 1: log1p(a)/log1p(a) can miss by an ulp, and numpy and math disagree
            if isinstance(x, np.ndarray):
                y = np.minimum(np.log1p(self.a * x) / math.log1p(self.a), 1.0)
                return np.where(x == 1.0, 1.0, y)
            if x == 1.0:
                return 1.0
            return min(math.log1p(self.a * x) / math.log1p(self.a), 1.0)
        if isinstance(x, np.ndarray):
            return np.full(x.shape, self.alpha)
        return self.alpha

    def derivative(self, x):
        if self.family is Family.POWER:
            return self.alpha * x ** (self.alpha - 1.0)
        if self.family is Family.LOG:
            return self.a / ((1.0 + self.a * x) * math.log1p(self.a))
        return 0.0 * x

    def describe(self) -> str:
        if self.family is Family.POWER:
            return f"power(alpha={self.alpha:g})"
        if self.family is Family.LOG:
            return f"log(a={self.a:g})"
        return f"constant({self.alpha:g})"


def eval_f(f: HomophilyFunction, x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"homophily argument must lie in [0, 1], got {x}")
    return f(x)


def eval_f_prime(f: HomophilyFunction, x: float) -> float:
    if not (0.0 < x <= 1.0):
        raise DomainError(f"derivative argument must lie in (0, 1], got {x}")
    return f.derivative(x)


@dataclass
class ValidationReport:
    subject: str
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self):
        status = "valid" if self.valid else "INVALID: " + "; ".join(self.violations)
        return f"{self.subject}: {status}"


def validate_homophily_function(f: HomophilyFunction, points: int = 1001) -> ValidationReport:
    """Grid check of f(1) = 1, range, strict monotonicity and strict midpoint concavity."""
    report = ValidationReport(f.describe())
    x = np.linspace(0.0, 1.0, points)
    y = f(x)
    if f(1.0) != 1.0:
        report.violations.append(f"f(1) = {f(1.0)!r}, expected 1")
    if np.any(y < 0.0) or np.any(y > 1.0):
        report.violations.append("range escapes [0, 1]")
    if not np.all(np.diff(y) > 0.0):
        report.violations.append("not strictly increasing on grid")
    # midpoints of adjacent grid pairs two apart: f(x_{i+1}) vs mean of neighbours
    mid = y[1:-1]
    chord = 0.5 * (y[:-2] + y[2:])
    if not np.all(mid > chord):
        report.violations.append("not strictly concave on grid")
    return report


class DecayMode(str, enum.Enum):
    PER_STEP = "per-step"
    COHORT = "cohort"


class EdgeClass(str, enum.Enum):
    SIMILAR = "similar"
    DISSIMILAR = "dissimilar"
    BIASED = "biased"


@dataclass(frozen=True)
class DecayKernel:
    """Weibull retention k(a) = 1 - lam**-gamma * gamma * a**(gamma - 1) at edge age a >= 1.

    ``constant`` replaces the Weibull form with k(a) = constant for every age;
    it is used for the symmetric fixed-point diagnostics.
    """

    lam: float = 2.0
    gamma: float = 0.5
    constant: float | None = None

    def __post_init__(self):
        if self.constant is not None:
            if not (0.0 <= self.constant <= 1.0):
                raise ParameterError(f"constant retention must lie in [0, 1], got {self.constant}")
            return
        if not (self.lam >= 1.0 and math.isfinite(self.lam)):
            raise ParameterError(f"Weibull scale lambda must be >= 1, got {self.lam}")
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"Weibull shape gamma must lie in (0, 1), got {self.gamma}")

    @classmethod
    def const(cls, value: float) -> "DecayKernel":
        return cls(constant=value)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, age):
        if self.constant is not None:
            if isinstance(age, np.ndarray):
                return np.full(age.shape, self.constant)
            return self.constant
        scale = self.lam ** (-self.gamma) * self.gamma
        if isinstance(age, np.ndarray):
            return 1.0 - scale * np.power(age.astype(float), self.gamma - 1.0)
        return 1.0 - scale * age ** (self.gamma - 1.0)

    def table(self, max_age: int) -> np.ndarray:
        """k(0..max_age); entry 0 is 1 by convention."""
        out = np.empty(max_age + 1)
        out[0] = 1.0
        if max_age:
            out[1:] = self(np.arange(1, max_age + 1))
        return out

    def describe(self) -> str:
        if self.constant is not None:
            return f"const({self.constant:g})"
        return f"weibull(lambda={self.lam:g}, gamma={self.gamma:g})"


def retention(k: DecayKernel, age: int) -> float:
    if age < 1:
        raise DomainError(f"edge age must be >= 1, got {age}")
    value = k(age)
    assert 0.0 <= value <= 1.0, value
    return value


def conditional_survival(k: DecayKernel, age: int, mode: DecayMode = DecayMode.PER_STEP) -> float:
    """Probability that an edge of the given age survives one more decay phase.

    per-step reads k(age) as the one-step retention; cohort reads k as the
    cumulative fraction retained, so the step survival is k(age)/k(age-1).
    """
    if age < 1:
        raise DomainError(f"edge age must be >= 1, got {age}")
    if DecayMode(mode) is DecayMode.PER_STEP:
        return k(age)
    prev = 1.0 if age == 1 else k(age - 1)
    if prev == 0.0:
        return 0.0
    return min(1.0, max(0.0, k(age) / prev))


def survival_table(k: DecayKernel, max_age: int, mode: DecayMode) -> np.ndarray:
    """Vectorised conditional_survival for ages 0..max_age (age 0 survives)."""
    ks = k.table(max_age)
    if DecayMode(mode) is DecayMode.PER_STEP:
        return ks
    out = np.ones(max_age + 1)
    prev = ks[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prev == 0.0, 0.0, ks[1:] / np.where(prev == 0.0, 1.0, prev))
    out[1:] = np.clip(ratio, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class KernelTriple:
    """Retention kernels for dissimilar, biased (rewired) and similar edges."""

    k_d: DecayKernel = field(default_factory=lambda: DecayKernel(1.2, 0.5))
    k_b: DecayKernel = field(default_factory=lambda: DecayKernel(1.5, 0.5))
    k_s: DecayKernel = field(default_factory=lambda: DecayKernel(2.0, 0.5))

    def __post_init__(self):
        ks = (self.k_d, self.k_b, self.k_s)
        if any(k.is_constant for k in ks):
            return
        if len({k.gamma for k in ks}) != 1:
            raise ParameterError("kernel ordering requires a shared gamma for k_d, k_b, k_s")
        if not (self.k_d.lam < self.k_b.lam < self.k_s.lam):
            raise ParameterError(
                "kernel ordering requires lambda_d < lambda_b < lambda_s, got "
                f"{self.k_d.lam} / {self.k_b.lam} / {self.k_s.lam}"
            )

    @classmethod
    def weibull(cls, lambda_d=1.2, lambda_b=1.5, lambda_s=2.0, gamma=0.5) -> "KernelTriple":
        return cls(DecayKernel(lambda_d, gamma), DecayKernel(lambda_b, gamma), DecayKernel(lambda_s, gamma))

    @classmethod
    def symmetric(cls, value: float) -> "KernelTriple":
        k = DecayKernel.const(value)
        return cls(k, k, k)

    def for_class(self, cls_: EdgeClass) -> DecayKernel:
        cls_ = EdgeClass(cls_)
        if cls_ is EdgeClass.SIMILAR:
            return self.k_s
        if cls_ is EdgeClass.BIASED:
            return self.k_b
        return self.k_d
