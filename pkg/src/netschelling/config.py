"""Simulation configuration, flat dotted-key config files and seed derivation."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (
    DecayKernel,
    DecayMode,
    Family,
    HomophilyFunction,
    KernelTriple,
    ParameterError,
)

MASK64 = (1 << 64) - 1


class Mode(str, enum.Enum):
    BASE = "base"
    WEAK_TIES = "weak-ties"
    BIAS = "bias"


class WeakTieRule(str, enum.Enum):
    FORMULA = "formula"
    STRICT_DISSIMILAR = "strict-dissimilar"


class ConfigError(ValueError):
    """Config problem tied to a specific key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    horizon: int = 100
    mode: Mode = Mode.BASE
    f: HomophilyFunction = field(default_factory=HomophilyFunction)
    kernels: KernelTriple = field(default_factory=KernelTriple)
    decay_mode: DecayMode = DecayMode.PER_STEP
    phi: float = 0.0
    seed: int = 0
    replicas: int = 1
    eps: float = 0.01
    weak_rule: WeakTieRule = WeakTieRule.FORMULA
    type_ratio: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "decay_mode", DecayMode(self.decay_mode))
        object.__setattr__(self, "weak_rule", WeakTieRule(self.weak_rule))
        if self.n < 4 or self.n % 2:
            raise ParameterError(f"n must be even and >= 4, got {self.n}")
        if self.horizon < 0:
            raise ParameterError(f"horizon must be >= 0, got {self.horizon}")
        if not (0.0 <= self.phi <= 1.0):
            raise ParameterError(
                f"phi must lie in [0, 1], got {self.phi}; rewiring more similar ties "
                "than exist is a contradiction"
            )
        if self.replicas < 1:
            raise ParameterError(f"replicas must be >= 1, got {self.replicas}")
        if not (0.0 < self.eps < 1.0):
            raise ParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if not (0.0 < self.type_ratio < 1.0):
            raise ParameterError(f"type_ratio must lie in (0, 1), got {self.type_ratio}")
        if not (0 <= self.seed <= MASK64):
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def replica_seed(self, r: int) -> int:
        return derive_seed(self.seed, r)

    def to_flat(self) -> dict[str, str]:
        """Dotted-key representation; parse_text(format_flat(...)) round-trips."""
        out = {"model.family": self.f.family.value}
        if self.f.family is Family.POWER:
            out["model.alpha"] = repr(self.f.alpha)
        else:
            out["model.a"] = repr(self.f.a)
        ks = self.kernels
        for name, k in (("d", ks.k_d), ("b", ks.k_b), ("s", ks.k_s)):
            if k.is_constant:
                out[f"kernels.constant_{name}"] = repr(k.constant)
            else:
                out[f"kernels.lambda_{name}"] = repr(k.lam)
        weibull = [k for k in (ks.k_d, ks.k_b, ks.k_s) if not k.is_constant]
        if weibull:
            out["kernels.gamma"] = repr(weibull[0].gamma)
        out.update({
            "run.mode": self.mode.value,
            "run.decay_mode": self.decay_mode.value,
            "run.phi": repr(self.phi),
            "run.n": str(self.n),
            "run.horizon": str(self.horizon),
            "run.seed": str(self.seed),
            "run.replicas": str(self.replicas),
            "run.eps": repr(self.eps),
            "run.weak_rule": self.weak_rule.value,
            "run.type_ratio": repr(self.type_ratio),
        })
        return out


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, replica: int) -> int:
    """Seed for replica r: splitmix64(master XOR r). Portable, pure in (master, r)."""
    return splitmix64((master ^ replica) & MASK64)


# -- flat config files -------------------------------------------------------

_FLOAT_KEYS = {
    "model.alpha", "model.a",
    "kernels.gamma", "kernels.lambda_d", "kernels.lambda_b", "kernels.lambda_s",
    "kernels.constant_d", "kernels.constant_b", "kernels.constant_s",
    "run.phi", "run.eps", "run.type_ratio",
}
_INT_KEYS = {"run.n", "run.horizon", "run.seed", "run.replicas"}
_STR_KEYS = {"model.family", "run.mode", "run.decay_mode", "run.weak_rule"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS

DEFAULTS = {
    "model.family": "power",
    "model.alpha": 0.5,
    "model.a": 3.0,
    "kernels.gamma": 0.5,
    "kernels.lambda_d": 1.2,
    "kernels.lambda_b": 1.5,
    "kernels.lambda_s": 2.0,
    "run.mode": "base",
    "run.decay_mode": "per-step",
    "run.phi": 0.0,
    "run.n": 1000,
    "run.horizon": 100,
    "run.seed": 0,
    "run.replicas": 1,
    "run.eps": 0.01,
    "run.weak_rule": "formula",
    "run.type_ratio": 0.5,
}

# sweepable parameter name -> config key
SWEEP_KEYS = {
    "alpha": "model.alpha",
    "lambda_s": "kernels.lambda_s",
    "lambda_d": "kernels.lambda_d",
    "lambda_b": "kernels.lambda_b",
    "gamma": "kernels.gamma",
    "phi": "run.phi",
    "mode": "run.mode",
    "n": "run.n",
    "horizon": "run.horizon",
}


def read_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(key, f"duplicate key ({source}:{lineno})")
        pairs[key] = value
    return pairs


def _convert(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value, 0)
        if key in _FLOAT_KEYS:
            out = float(value)
            if not math.isfinite(out):
                raise ValueError(value)
            return out
    except ValueError:
        kind = "integer" if key in _INT_KEYS else "number"
        raise ConfigError(key, f"expected a {kind}, got {value!r}") from None
    return value


def build_config(values: dict) -> SimConfig:
    """Validated SimConfig from typed dotted-key values (missing keys take defaults)."""
    v = dict(DEFAULTS)
    v.update(values)

    def guard(key, fn):
        try:
            return fn()
        except ParameterError as exc:
            raise ConfigError(key, str(exc)) from None
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None

    family = guard("model.family", lambda: Family(v["model.family"]))
    if family is Family.CONSTANT:
        raise ConfigError("model.family", "use 'power' or 'log'")
    key = "model.alpha" if family is Family.POWER else "model.a"
    f = guard(key, lambda: HomophilyFunction(family, alpha=v["model.alpha"], a=v["model.a"]))

    gamma = v["kernels.gamma"]
    uses_weibull = any(f"kernels.constant_{name}" not in v for name in ("d", "b", "s"))
    if uses_weibull and not (0.0 < gamma < 1.0):
        raise ConfigError("kernels.gamma", f"gamma must lie in (0, 1), got {gamma}")
    kernels = {}
    for name in ("d", "b", "s"):
        if f"kernels.constant_{name}" in v:
            kernels[name] = guard(
                f"kernels.constant_{name}", lambda: DecayKernel.const(v[f"kernels.constant_{name}"])
            )
        else:
            kernels[name] = guard(
                f"kernels.lambda_{name}", lambda: DecayKernel(v[f"kernels.lambda_{name}"], gamma)
            )
    ks = (kernels["d"], kernels["b"], kernels["s"])
    if not any(k.is_constant for k in ks):
        if not v["kernels.lambda_d"] < v["kernels.lambda_s"]:
            raise ConfigError(
                "kernels.lambda_d",
                f"kernel ordering violated: lambda_d={v['kernels.lambda_d']} must be < "
                f"lambda_s={v['kernels.lambda_s']}",
            )
        if not v["kernels.lambda_d"] < v["kernels.lambda_b"] < v["kernels.lambda_s"]:
            raise ConfigError(
                "kernels.lambda_b",
                f"kernel ordering violated: need lambda_d < lambda_b < lambda_s, got "
                f"{v['kernels.lambda_d']} / {v['kernels.lambda_b']} / {v['kernels.lambda_s']}",
            )
    triple = KernelTriple(*ks)

    mode = guard("run.mode", lambda: Mode(v["run.mode"]))
    decay_mode = guard("run.decay_mode", lambda: DecayMode(v["run.decay_mode"]))
    weak_rule = guard("run.weak_rule", lambda: WeakTieRule(v["run.weak_rule"]))
    phi = v["run.phi"]
    if not 0.0 <= phi <= 1.0:
        raise ConfigError(
            "run.phi",
            f"phi={phi} outside [0, 1]: a rewiring bias above 1 would rewire more similar "
            "ties than exist",
        )
    for key, check, msg in (
        ("run.n", lambda x: x >= 4 and x % 2 == 0, "must be even and >= 4"),
        ("run.horizon", lambda x: x >= 0, "must be >= 0"),
        ("run.replicas", lambda x: x >= 1, "must be >= 1"),
        ("run.seed", lambda x: 0 <= x <= MASK64, "must be an unsigned 64-bit integer"),
        ("run.eps", lambda x: 0.0 < x < 1.0, "must lie in (0, 1)"),
        ("run.type_ratio", lambda x: 0.0 < x < 1.0, "must lie in (0, 1)"),
    ):
        if not check(v[key]):
            raise ConfigError(key, f"{v[key]!r} {msg}")
    return SimConfig(
        n=v["run.n"], horizon=v["run.horizon"], mode=mode, f=f, kernels=triple,
        decay_mode=decay_mode, phi=phi, seed=v["run.seed"], replicas=v["run.replicas"],
        eps=v["run.eps"], weak_rule=weak_rule, type_ratio=v["run.type_ratio"],
    )


def parse_text(text: str, source: str = "<config>") -> tuple[SimConfig, dict[str, list]]:
    """Parse config text. Returns the config and any ``sweep.*`` grid lists.

    ``manifest.*`` keys are accepted and ignored so a run manifest can be fed
    back in as a config.
    """
    pairs = read_pairs(text, source)
    values = {}
    grid: dict[str, list] = {}
    for key, raw in pairs.items():
        if key.startswith("manifest."):
            continue
        if key.startswith("sweep."):
            name = key[len("sweep."):]
            if name == "max_cells":
                grid[name] = [_convert("run.n", raw)]
                continue
            if name == "engine":
                grid[name] = [raw]
                continue
            if name not in SWEEP_KEYS:
                raise ConfigError(key, f"unknown sweep parameter; choose from {sorted(SWEEP_KEYS)}")
            items = [s.strip() for s in raw.strip("[]").split(",") if s.strip()]
            if not items:
                raise ConfigError(key, "empty grid list")
            grid[name] = [_convert(SWEEP_KEYS[name], s) for s in items]
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        values[key] = _convert(key, raw)
    return build_config(values), grid


def parse_config(path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    cfg, _ = parse_text(path.read_text(), str(path))
    return cfg


def format_flat(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


@dataclass(frozen=True)
class SweepSpec:
    base: SimConfig
    grid: dict[str, list]
    replicas: int = 1
    max_cells: int = 10_000
    engine: str = "abm"

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.grid.values()) if self.grid else 1

    def cells(self) -> list[tuple[dict, SimConfig]]:
        if self.size > self.max_cells:
            raise ConfigError(
                "sweep.max_cells", f"grid has {self.size} cells, cap is {self.max_cells}"
            )
        names = list(self.grid)
        flat = {}
        for key, raw in self.base.to_flat().items():
            flat[key] = _convert(key, raw)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in names)):
            params = dict(zip(names, combo))
            values = dict(flat)
            for name, val in params.items():
                values[SWEEP_KEYS[name]] = val
            values["run.replicas"] = self.replicas
            out.append((params, build_config(values)))
        return out


def sweep_from_text(text: str, source: str = "<config>") -> SweepSpec:
    cfg, grid = parse_text(text, source)
    max_cells = grid.pop("max_cells", [10_000])[0]
    engine = grid.pop("engine", ["abm"])[0]
    if engine not in ("abm", "meanfield"):
        raise ConfigError("sweep.engine", f"expected 'abm' or 'meanfield', got {engine!r}")
    return SweepSpec(cfg, grid, replicas=cfg.replicas, max_cells=max_cells, engine=engine)
