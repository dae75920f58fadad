"""Deterministic expected-value recurrences for the network Schelling model.

Stocks are per node and kept as a cohort ledger: one column per birth step,
one row per edge class (similar, dissimilar, rewired). A cohort born at step
``b`` has age ``t - b`` at step ``t``; new cohorts are not decayed in the
step they are formed.

``per-step`` decay multiplies each surviving cohort by k(age) every step.
``cohort`` decay sets each cohort to its original increment times k(age).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Mode, SimConfig
from .core import DecayMode, DomainError, ParameterError

SIM, DIS, BIA = 0, 1, 2


@dataclass
class CohortLedger:
    inc: np.ndarray   # (3, capacity) original increments (similar rows shrink when rewired)
    mass: np.ndarray  # (3, capacity) current expected stock per cohort
    size: int         # number of cohorts in use, equals t + 1

    @classmethod
    def initial(cls, capacity: int = 1) -> "CohortLedger":
        inc = np.zeros((3, max(capacity, 1)))
        inc[SIM, 0] = inc[DIS, 0] = 0.5
        return cls(inc, inc.copy(), 1)

    def copy(self, extra: int = 0) -> "CohortLedger":
        cap = max(self.inc.shape[1], self.size + extra)
        inc = np.zeros((3, cap))
        mass = np.zeros((3, cap))
        inc[:, : self.size] = self.inc[:, : self.size]
        mass[:, : self.size] = self.mass[:, : self.size]
        return CohortLedger(inc, mass, self.size)


@dataclass(frozen=True)
class MeanFieldState:
    t: int
    E_s: float
    E_d: float              # all dissimilar stock, rewired part included
    p: float | None = None  # similar-tie probability used at step t (None at t = 0)
    q: float | None = None
    x_prev: float | None = None  # dissimilar fraction p was computed from
    p_prev: float | None = None
    E_b: float = 0.0        # rewired (biased) share of E_d
    rewired: float = 0.0    # stock moved similar -> dissimilar during this step
    clamped: bool = False
    cohorts: CohortLedger | None = field(default=None, repr=False, compare=False)

    @property
    def D(self) -> float:
        return self.E_s + self.E_d

    @property
    def x(self) -> float:
        return self.E_d / self.D

    def row(self, sensitivity_value: float | None = None) -> dict:
        return {
            "t": self.t, "p": self.p, "q": self.q, "E_s": self.E_s,
            "E_d": self.E_d, "x": self.x, "sensitivity": sensitivity_value,
        }


def init_meanfield(cfg: SimConfig | None = None, capacity: int = 1) -> MeanFieldState:
    """t = 0 state: unit degree per node split evenly, so x0 = 0.5."""
    return MeanFieldState(t=0, E_s=0.5, E_d=0.5, cohorts=CohortLedger.initial(capacity))


def base_increments(p: float) -> tuple[float, float]:
    """(similar, dissimilar) expected new ties per node from one primary draw."""
    return p, 1.0 - p


def weak_dissimilar_increment(q_i: float, p_i: float, p_k: float, q_k: float) -> float:
    """Primary plus secondary dissimilar ties: q_i + q_i*p_k + p_i*q_k."""
    return q_i + q_i * p_k + p_i * q_k


def weak_increments(p: float) -> tuple[float, float]:
    # neighbour k shares the focal node's probabilities under the mean field
    q = 1.0 - p
    return p + p * p + q * q, weak_dissimilar_increment(q, p, p, q)


def rewire_term(phi: float, k_s: float, t: int, q_prev: float) -> float:
    """Literal rewiring term (phi - k_s) * (t - 1 - q_{t-1}) of the bias recurrence."""
    return (phi - k_s) * (t - 1 - q_prev)


def _kernel_rows(cfg: SimConfig, now: int) -> np.ndarray:
    """k at ages now..1 for the cohorts born 0..now-1, rows (similar, dissimilar, biased)."""
    ages = np.arange(now, 0, -1)
    ks = cfg.kernels
    return np.vstack([ks.k_s(ages), ks.k_d(ages), ks.k_b(ages)])


def rewire_phase(led: CohortLedger, now: int, phi: float, kb_rev: np.ndarray) -> float:
    """Move phi * (1 - k_b(age)) of every aged similar cohort to the dissimilar side.

    Only the similar stock shrinks here; the caller books the moved total as a
    new rewired cohort, so total degree is unchanged by this phase.
    """
    frac = phi * (1.0 - kb_rev)
    moved = frac * led.mass[SIM, :now]
    led.mass[SIM, :now] -= moved
    led.inc[SIM, :now] *= 1.0 - frac
    return float(moved.sum())


def _advance(
    led: CohortLedger,
    now: int,
    inc_s: float,
    inc_d: float,
    phi: float,
    krev: np.ndarray,
    decay_mode: DecayMode,
) -> tuple[float, bool]:
    """Rewire, decay and append the new cohort in place. Returns (rewired, clamped)."""
    mass = led.mass[:, :now]
    rewired = rewire_phase(led, now, phi, krev[BIA]) if phi > 0.0 else 0.0
    if decay_mode is DecayMode.PER_STEP:
        mass *= krev
    else:
        np.multiply(led.inc[:, :now], krev, out=mass)
    clamped = False
    # decay by k >= 0 keeps mass non-negative; only rewiring can push it below
    if phi > 0.0 and np.any(mass < 0.0):
        np.maximum(mass, 0.0, out=mass)
        clamped = True
    led.inc[SIM, now] = led.mass[SIM, now] = inc_s
    led.inc[DIS, now] = led.mass[DIS, now] = inc_d
    led.inc[BIA, now] = led.mass[BIA, now] = rewired
    led.size = now + 1
    return rewired, clamped


def _step(state: MeanFieldState, cfg: SimConfig, mode: Mode, phi: float,
          krev: np.ndarray | None = None, in_place: bool = False) -> MeanFieldState:
    if state.cohorts is None:
        raise ValueError("state carries no cohort ledger; use a state produced by init/step")
    now = state.t + 1
    x_prev = state.x
    p = cfg.f(x_prev)
    q = 1.0 - p
    if mode is Mode.WEAK_TIES:
        inc_s, inc_d = weak_increments(p)
    else:
        inc_s, inc_d = base_increments(p)
    led = state.cohorts if in_place else state.cohorts.copy(extra=1)
    if led.inc.shape[1] <= now:
        led = led.copy(extra=1)
    if krev is None:
        krev = _kernel_rows(cfg, now)
    rewired, clamped = _advance(led, now, inc_s, inc_d, phi if mode is Mode.BIAS else 0.0,
                                krev, cfg.decay_mode)
    sums = led.mass[:, : now + 1].sum(axis=1)
    return MeanFieldState(
        t=now,
        E_s=float(sums[SIM]),
        E_d=float(sums[DIS] + sums[BIA]),
        p=p,
        q=q,
        x_prev=x_prev,
        p_prev=state.p,
        E_b=float(sums[BIA]),
        rewired=rewired,
        clamped=clamped or state.clamped,
        cohorts=led,
    )


def step_base(state: MeanFieldState, cfg: SimConfig) -> MeanFieldState:
    return _step(state, cfg, Mode.BASE, 0.0)


def step_weak(state: MeanFieldState, cfg: SimConfig) -> MeanFieldState:
    return _step(state, cfg, Mode.WEAK_TIES, 0.0)


def step_bias(state: MeanFieldState, cfg: SimConfig, phi: float | None = None) -> MeanFieldState:
    phi = cfg.phi if phi is None else phi
    if not 0.0 <= phi <= 1.0:
        raise ParameterError(f"phi must lie in [0, 1], got {phi}")
    return _step(state, cfg, Mode.BIAS, phi)


def step(state: MeanFieldState, cfg: SimConfig) -> MeanFieldState:
    return _step(state, cfg, cfg.mode, cfg.phi)


@dataclass
class MeanFieldTrajectory:
    states: list[MeanFieldState]
    mode: Mode
    config: SimConfig

    def __len__(self):
        return len(self.states)

    @property
    def t(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    @property
    def p(self) -> np.ndarray:
        return np.array([np.nan if s.p is None else s.p for s in self.states])

    def sensitivities(self) -> list[float | None]:
        out = []
        for s in self.states:
            if s.t < 2 or s.x_prev is None or s.x_prev <= 0.0:
                out.append(None)
            else:
                out.append(sensitivity(s, self.config, self.mode, self.config.phi))
        return out

    def rows(self) -> list[dict]:
        return [s.row(v) for s, v in zip(self.states, self.sensitivities())]


def run_trajectory(cfg: SimConfig, horizon: int | None = None,
                   mode: Mode | None = None) -> MeanFieldTrajectory:
    """Iterate the recurrence from the t = 0 state for ``horizon`` steps."""
    horizon = cfg.horizon if horizon is None else horizon
    mode = cfg.mode if mode is None else Mode(mode)
    if horizon < 0:
        raise ParameterError(f"horizon must be >= 0, got {horizon}")
    ktab = np.vstack([k.table(horizon) for k in (cfg.kernels.k_s, cfg.kernels.k_d, cfg.kernels.k_b)])
    # reversed and contiguous: the slice for step `now` holds k(now), ..., k(1)
    rk = np.ascontiguousarray(ktab[:, ::-1])
    state = init_meanfield(cfg, capacity=horizon + 1)
    states = [_light(state)]
    for now in range(1, horizon + 1):
        krev = rk[:, horizon - now:horizon]
        state = _step(state, cfg, mode, cfg.phi, krev=krev, in_place=True)
        states.append(_light(state))
    return MeanFieldTrajectory(states, mode, cfg)


def _light(state: MeanFieldState) -> MeanFieldState:
    return MeanFieldState(state.t, state.E_s, state.E_d, state.p, state.q, state.x_prev,
                          state.p_prev, state.E_b, state.rewired, state.clamped)


# -- sensitivity --------------------------------------------------------------

def sensitivity(state: MeanFieldState, cfg: SimConfig, mode: Mode | None = None,
                phi: float | None = None) -> float:
    """Derivative of p_t with respect to q_{t-1}, with elapsed-step denominators.

    base:      f'(x_{t-1}) / t
    weak-ties: f'(x_{t-1}) * (1 + p_{t-1}) / t
    bias:      f'(x_{t-1}) * (1 - (phi - k_s(t))) / (t - 1)
    """
    mode = cfg.mode if mode is None else Mode(mode)
    phi = cfg.phi if phi is None else phi
    t = state.t
    if t < 2:
        raise DomainError(f"sensitivity needs t >= 2, got {t}")
    slope = cfg.f.derivative(state.x_prev)
    if mode is Mode.BASE:
        return slope / t
    if mode is Mode.WEAK_TIES:
        return slope * (1.0 + state.p_prev) / t
    return slope * (1.0 - (phi - cfg.kernels.k_s(t))) / (t - 1)


def p_given_q_prev(state: MeanFieldState, cfg: SimConfig, mode: Mode, q_prev: float,
                   phi: float | None = None) -> float:
    """p_t as a function of q_{t-1}, everything else held at the state's values.

    The dissimilar stock entering f is normalised by elapsed steps (t, or t - 1
    under bias) and the contribution of q_{t-1} goes through the same increment
    terms the recurrences use. At q_prev = 1 - p_{t-1} this returns f(x_{t-1}).
    """
    mode = Mode(mode)
    phi = cfg.phi if phi is None else phi
    t = state.t
    p0 = state.p_prev
    q0 = 1.0 - p0
    if mode is Mode.BASE:
        den = t

        def contrib(q):
            return q
    elif mode is Mode.WEAK_TIES:
        den = t

        def contrib(q):
            return weak_dissimilar_increment(q, p0, p0, q0)
    else:
        den = t - 1
        k_s = cfg.kernels.k_s(t)

        def contrib(q):
            return q + rewire_term(phi, k_s, t, q)
    rest = state.x_prev * den - contrib(q0)
    return cfg.f((rest + contrib(q_prev)) / den)


# -- steady state -------------------------------------------------------------

@dataclass(frozen=True)
class SteadyStateInput:
    phi_star: float
    t_star: float
    q_star: float

    def __post_init__(self):
        if not 0.0 <= self.phi_star <= 1.0:
            raise ParameterError(
                f"phi* must lie in [0, 1], got {self.phi_star}; rewiring more similar "
                "ties than exist is a contradiction"
            )
        if not self.t_star > 2:
            raise ParameterError(f"t* must exceed 2, got {self.t_star}")
        if not 0.0 <= self.q_star <= 1.0:
            raise ParameterError(f"q* must lie in [0, 1], got {self.q_star}")


@dataclass(frozen=True)
class SteadyStateResult:
    E_d: float
    ratio: float   # q*/p*, the dissimilar to similar stock ratio at phi* = 1
    regime: str    # "boundary" at phi* = 1, otherwise "divergent"

    @property
    def negative(self) -> bool:
        return self.E_d < 0.0


def steady_state_ed(inp: SteadyStateInput) -> SteadyStateResult:
    phi, t, q = inp.phi_star, inp.t_star, inp.q_star
    if phi == 1.0:
        e_d = (1.0 + t) * q
    else:
        e_d = q + t * q + t * (t - 1) * (phi - 1) * (t - 2 - q) + (phi - 1) * (t - 1 - q)
    p = 1.0 - q
    ratio = q / p if p > 0.0 else math.inf
    return SteadyStateResult(e_d, ratio, "boundary" if phi == 1.0 else "divergent")


# -- diagnostics --------------------------------------------------------------

@dataclass
class ConvergenceReport:
    fragmentation_time: int | None
    eps: float
    p_profile: str
    p_direction_changes: int
    terminal_x: float
    terminal_sensitivity: float | None
    plateau: float | None  # settled interior value of x, if the tail is flat

    @property
    def fragmented(self) -> bool:
        return self.fragmentation_time is not None

    def lines(self) -> list[str]:
        ft = "not reached" if self.fragmentation_time is None else str(self.fragmentation_time)
        sens = "n/a" if self.terminal_sensitivity is None else f"{self.terminal_sensitivity:.6g}"
        plateau = "none" if self.plateau is None else f"{self.plateau:.8f}"
        return [
            f"fragmentation_time(eps={self.eps:g}) = {ft}",
            f"p_profile = {self.p_profile} ({self.p_direction_changes} direction changes)",
            f"terminal_x = {self.terminal_x:.10g}",
            f"terminal_sensitivity = {sens}",
            f"plateau = {plateau}",
        ]


def _profile(values: np.ndarray, tol: float = 0.0) -> tuple[str, int]:
    d = np.diff(values)
    d = d[np.abs(d) > tol]
    if d.size == 0:
        return "constant", 0
    signs = np.sign(d)
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    if np.all(signs > 0):
        return "non-decreasing", 0
    if np.all(signs < 0):
        return "non-increasing", 0
    return "non-monotone", changes


def convergence_diagnostics(traj: MeanFieldTrajectory, eps: float = 0.01,
                            plateau_tol: float = 1e-6) -> ConvergenceReport:
    if len(traj) < 2:
        raise ValueError("convergence diagnostics need at least two states")
    from .metrics import fragmentation_time

    x = traj.x
    p = traj.p[1:]
    profile, changes = _profile(p)
    tail = x[-max(10, len(x) // 10):]
    plateau = None
    if x[-1] >= eps and float(tail.max() - tail.min()) < plateau_tol:
        plateau = float(x[-1])
    last = traj.states[-1]
    term_sens = None
    if last.t >= 2 and last.x_prev and last.x_prev > 0.0:
        term_sens = sensitivity(last, traj.config, traj.mode)
    return ConvergenceReport(
        fragmentation_time=fragmentation_time(traj, eps),
        eps=eps,
        p_profile=profile,
        p_direction_changes=changes,
        terminal_x=float(x[-1]),
        terminal_sensitivity=term_sens,
        plateau=plateau,
    )
