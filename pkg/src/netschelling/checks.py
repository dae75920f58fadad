"""Invariant suite run by ``netschelling check``."""

from __future__ import annotations

import copy
import itertools
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import meanfield as mf
from .abm import abm_step, init_network, run_abm, _Tables
from .config import Mode, SimConfig
from .core import (
    DecayKernel,
    DecayMode,
    HomophilyFunction,
    KernelTriple,
    validate_homophily_function,
)
from .metrics import MetricSeries, compare_to_meanfield, cross_edge_fraction, fragmentation_time


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  [{self.detail}]" if self.detail else ""
        return f"{tag}  {self.name} ({self.seconds:.2f}s){extra}"


REGISTRY: list[tuple[str, Callable[[SimConfig], tuple[bool, str]]]] = []


def invariant(name: str):
    def wrap(fn):
        REGISTRY.append((name, fn))
        return fn
    return wrap


# -- model core ---------------------------------------------------------------

def registered_functions(cfg: SimConfig) -> list[HomophilyFunction]:
    fs = [cfg.f, HomophilyFunction.power(0.5), HomophilyFunction.power(0.2),
          HomophilyFunction.power(0.8), HomophilyFunction.log(3.0), HomophilyFunction.log(0.5)]
    out = []
    for f in fs:
        if f not in out:
            out.append(f)
    return out


@invariant("core: homophily functions are increasing, concave, f(1)=1, in range, f' matches FD")
def _homophily(cfg):
    bad = []
    x = np.linspace(0.0, 1.0, 102)[1:-1]
    h = 1e-6
    for f in registered_functions(cfg):
        report = validate_homophily_function(f)
        if not report.valid:
            bad.append(str(report))
        fd = (f(x + h) - f(x - h)) / (2 * h)
        rel = np.max(np.abs(f.derivative(x) - fd) / np.abs(fd))
        if rel > 1e-6:
            bad.append(f"{f.describe()}: derivative rel err {rel:.2e}")
    return not bad, "; ".join(bad) or f"{len(registered_functions(cfg))} functions"


@invariant("core: Weibull k(a) in [1-gamma, 1) and strictly increasing for a in [1, 1e6]")
def _kernel_range(cfg):
    ages = np.arange(1, 10**6 + 1)
    bad = []
    for k in (cfg.kernels.k_d, cfg.kernels.k_b, cfg.kernels.k_s):
        if k.is_constant:
            continue
        v = k(ages)
        if v.min() < 1.0 - k.gamma or v.max() >= 1.0:
            bad.append(f"{k.describe()} range [{v.min()}, {v.max()}]")
        if not np.all(np.diff(v) > 0.0):
            bad.append(f"{k.describe()} not strictly increasing")
    return not bad, "; ".join(bad)


@invariant("core: k_d(a) < k_b(a) < k_s(a) for a in [1, 1e4]")
def _kernel_order(cfg):
    ks = cfg.kernels
    if any(k.is_constant for k in (ks.k_d, ks.k_b, ks.k_s)):
        return True, "constant kernels: ordering not required"
    a = np.arange(1, 10**4 + 1)
    ok = np.all(ks.k_d(a) < ks.k_b(a)) and np.all(ks.k_b(a) < ks.k_s(a))
    return bool(ok), ""


# -- mean field ---------------------------------------------------------------

def _mf_cfgs(cfg: SimConfig, horizon: int = 200) -> list[SimConfig]:
    return [cfg.with_(mode=m, phi=phi, horizon=horizon, decay_mode=d)
            for m, phi in ((Mode.BASE, 0.0), (Mode.WEAK_TIES, 0.0), (Mode.BIAS, 0.5), (Mode.BIAS, 1.0))
            for d in DecayMode]


@invariant("meanfield: p + q = 1 exactly at every step")
def _pq(cfg):
    for c in _mf_cfgs(cfg):
        for s in mf.run_trajectory(c).states[1:]:
            if s.p + s.q != 1.0:
                return False, f"{c.mode.value} t={s.t}: p+q={s.p + s.q!r}"
    return True, ""


@invariant("meanfield: stocks non-negative for phi in [0,1]; rewiring conserves degree")
def _stocks(cfg):
    for phi in (0.0, 0.25, 0.5, 0.75, 1.0):
        for d in DecayMode:
            c = cfg.with_(mode=Mode.BIAS, phi=phi, horizon=200, decay_mode=d)
            tr = mf.run_trajectory(c)
            for s in tr.states:
                if s.E_s < 0 or s.E_d < 0 or s.clamped:
                    return False, f"phi={phi} t={s.t}: E_s={s.E_s} E_d={s.E_d}"
    c = cfg.with_(mode=Mode.BIAS, phi=1.0)
    state = mf.init_meanfield(c)
    worst = 0.0
    for _ in range(50):
        now = state.t + 1
        led = state.cohorts.copy()
        before = led.mass[:, :now].sum()
        moved = mf.rewire_phase(led, now, 1.0, mf._kernel_rows(c, now)[mf.BIA])
        after = led.mass[:, :now].sum() + moved
        worst = max(worst, abs(after - before) / before)
        state = mf.step_bias(state, c, 1.0)
    return worst < 1e-12, f"max relative degree change under rewiring {worst:.1e}"


@invariant("meanfield: identical config gives a bit-identical trajectory")
def _mf_determinism(cfg):
    for c in _mf_cfgs(cfg, horizon=100):
        a = mf.run_trajectory(c).rows()
        b = mf.run_trajectory(c).rows()
        if a != b:
            return False, f"{c.mode.value}/{c.decay_mode.value} differs"
    return True, ""


@invariant("meanfield: per-step and cohort decay agree exactly for age-constant k (20 steps, 1e-12)")
def _decay_modes(cfg):
    worst = []
    for c in (0.0, 0.5, 0.9, 1.0):
        ks = KernelTriple.symmetric(c)
        a = mf.run_trajectory(cfg.with_(kernels=ks, decay_mode=DecayMode.PER_STEP, mode=Mode.BASE), 20)
        b = mf.run_trajectory(cfg.with_(kernels=ks, decay_mode=DecayMode.COHORT, mode=Mode.BASE), 20)
        diff = float(np.max(np.abs(a.x - b.x)))
        worst.append((c, diff))
    failing = [(c, d) for c, d in worst if d > 1e-12]
    detail = ", ".join(f"k={c:g}: max|dx|={d:.3g}" for c, d in worst)
    return not failing, detail


@invariant("meanfield: t * sensitivity(base) == f'(x_{t-1}); sensitivity -> 0")
def _sens(cfg):
    c = cfg.with_(mode=Mode.BASE, horizon=2000)
    tr = mf.run_trajectory(c)
    worst = 0.0
    for s in tr.states[2:]:
        v = mf.sensitivity(s, c, Mode.BASE)
        worst = max(worst, abs(v * s.t - c.f.derivative(s.x_prev)) / c.f.derivative(s.x_prev))
    last = mf.sensitivity(tr.states[-1], c, Mode.BASE)
    ok = worst <= 4 * np.finfo(float).eps and last < 1e-3
    return ok, f"max rel mismatch {worst:.1e}, sensitivity(T={c.horizon})={last:.2e}"


@invariant("meanfield: step_bias(phi=0) equals step_base to 1e-15")
def _bias_zero(cfg):
    for d in DecayMode:
        c = cfg.with_(decay_mode=d)
        a = b = mf.init_meanfield(c)
        for _ in range(200):
            a = mf.step_base(a, c)
            b = mf.step_bias(b, c, 0.0)
            if abs(a.E_d - b.E_d) > 1e-15 or abs(a.E_s - b.E_s) > 1e-15 or a.p != b.p:
                return False, f"{d.value} t={a.t}"
    return True, ""


@invariant("meanfield: weak-tie dissimilar increment >= base, equality iff p*q = 0")
def _weak_inc(cfg):
    for p in np.linspace(0.0, 1.0, 1001):
        q = 1.0 - p
        _, weak = mf.weak_increments(p)
        _, base = mf.base_increments(p)
        if weak < base or ((weak == base) != (p * q == 0.0)):
            return False, f"p={p}"
    return True, ""


# -- agent-based engine -------------------------------------------------------

def _abm_cfgs(cfg: SimConfig) -> list[SimConfig]:
    n = min(cfg.n, 400)
    return [cfg.with_(n=n, horizon=30, mode=m, phi=phi, replicas=1, decay_mode=d)
            for (m, phi), d in itertools.product(
                ((Mode.BASE, 0.0), (Mode.WEAK_TIES, 0.0), (Mode.BIAS, 0.7)), DecayMode)]


@invariant("abm: no self-loops or duplicates, classes match types, counters match recount")
def _integrity(cfg):
    for c in _abm_cfgs(cfg):
        try:
            run_abm(c, check=True)
        except AssertionError as exc:
            return False, str(exc)
    return True, f"{len(_abm_cfgs(cfg))} configs checked after every step"


@invariant("abm: config determines every replica bit-exactly")
def _abm_determinism(cfg):
    c = cfg.with_(n=min(cfg.n, 400), horizon=20, replicas=2, mode=Mode.BIAS, phi=0.5)
    a = run_abm(c)
    b = run_abm(c)
    for ra, rb in zip(a, b):
        for col in ("x_hat", "mean_degree", "n_similar", "n_dissimilar", "skipped", "rewired"):
            if not np.array_equal(getattr(ra.series, col), getattr(rb.series, col)):
                return False, f"replica {ra.series.provenance} column {col}"
    return True, ""


@invariant("abm: rewiring keeps the edge count")
def _abm_rewire(cfg):
    c = cfg.with_(n=min(cfg.n, 400), horizon=30, mode=Mode.BIAS, phi=1.0)
    total = 0
    for r in run_abm(c):
        for s in r.stats:
            total += s.rewired
            if s.edges_before_rewire != s.edges_after_rewire:
                return False, f"t={s.t}"
    return total > 0, f"{total} rewirings"


@invariant("abm: top-quartile x_i nodes choose similar ties more often than bottom quartile (3 SE)")
def _abm_homophily(cfg, n: int = 2000, horizon: int = 50, replicas: int = 4):
    c = cfg.with_(n=n, horizon=horizon, mode=Mode.BASE)
    hi_n = hi_k = lo_n = lo_k = 0
    for r in range(replicas):
        state = init_network(c.n, c.replica_seed(r), c.type_ratio)
        tables = _Tables(c)
        for _ in range(horizon):
            abm_step(state, c, tables)
            x, want = state.last_formation
            q1, q3 = np.quantile(x, [0.25, 0.75])
            hi = x > q3
            lo = x < q1
            hi_n += int(hi.sum())
            hi_k += int(want[hi].sum())
            lo_n += int(lo.sum())
            lo_k += int(want[lo].sum())
    ph, pl = hi_k / hi_n, lo_k / lo_n
    se = math.sqrt(ph * (1 - ph) / hi_n + pl * (1 - pl) / lo_n)
    return ph - pl > 3 * se, f"top {ph:.4f} vs bottom {pl:.4f}, SE {se:.2e}"


@invariant("abm: weak-tie step adds at least as many dissimilar edges as the base step")
def _abm_weak(cfg):
    c = cfg.with_(n=min(cfg.n, 1000), mode=Mode.BASE)
    cw = c.with_(mode=Mode.WEAK_TIES)
    base_total = weak_total = 0
    for r in range(5):
        state = init_network(c.n, c.replica_seed(r), c.type_ratio)
        tables = _Tables(c)
        for _ in range(10):
            abm_step(state, c, tables)
        a = copy.deepcopy(state)
        b = copy.deepcopy(state)
        nd0 = a.n_dissimilar
        abm_step(a, c, tables)
        abm_step(b, cw, _Tables(cw))
        # count formation increments only, before decay removed anything
        inc_base = a.last_stats.primary_dissimilar
        new_secondary = [e for e in b.edges() if e.birth == b.t and e.origin == 1 and e.cls.value == "dissimilar"]
        inc_weak = b.last_stats.primary_dissimilar + len(new_secondary)
        if inc_weak < inc_base:
            return False, f"replica {r}: weak {inc_weak} < base {inc_base} (start {nd0})"
        base_total += inc_base
        weak_total += inc_weak
    return True, f"mean increments base {base_total / 5:.1f}, weak {weak_total / 5:.1f}"


# -- metrics ------------------------------------------------------------------

@invariant("metrics: cross-edge fraction recount is bit-equal to the incremental value")
def _xhat(cfg):
    c = cfg.with_(n=min(cfg.n, 400), horizon=30, mode=Mode.BIAS, phi=0.5)
    state = init_network(c.n, c.replica_seed(0), c.type_ratio)
    tables = _Tables(c)
    for _ in range(c.horizon):
        abm_step(state, c, tables)
        recount = sum(1 for e in state.edges() if e.cls.value == "dissimilar") / state.m
        if recount != cross_edge_fraction(state):
            return False, f"t={state.t}"
    return True, ""


@invariant("metrics: comparison RMSE is permutation-invariant over replicas")
def _rmse_perm(cfg):
    rng = np.random.default_rng(7)
    t = np.arange(30)
    base = rng.random(30)
    ens = [MetricSeries(t, np.clip(base + rng.normal(0, 0.05, 30), 0, 1), t, t, t, provenance=i)
           for i in range(6)]
    ref = compare_to_meanfield(ens, base)
    for perm in itertools.islice(itertools.permutations(range(6)), 0, 720, 37):
        rep = compare_to_meanfield([ens[i] for i in perm], base)
        if rep.rmse != ref.rmse or rep.coverage != ref.coverage:
            return False, f"permutation {perm}"
    return True, ""


@invariant("metrics: fragmentation time is monotone in eps")
def _frag_mono(cfg):
    tr = mf.run_trajectory(cfg.with_(kernels=KernelTriple.weibull(1.01, 30.0, 1000.0, 0.95), horizon=2000))
    prev = None
    for eps in np.linspace(0.005, 0.6, 120):
        ft = fragmentation_time(tr, float(eps))
        ft = math.inf if ft is None else ft
        if prev is not None and ft > prev:
            return False, f"eps={eps}"
        prev = ft
    return True, ""


# -- io / cli -----------------------------------------------------------------

@invariant("io: sweep outputs byte-identical across worker counts; CSV headers; manifest round-trip")
def _io(cfg):
    from .cli import main

    text = (
        "run.n = 100\nrun.horizon = 8\nrun.seed = 11\nrun.replicas = 2\n"
        "sweep.phi = 0.0, 0.5\nsweep.mode = base, bias\n"
    )
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        conf = tmp / "sweep.conf"
        conf.write_text(text)
        outs = []
        for workers in (1, 2):
            out = tmp / f"w{workers}"
            code = main(["sweep", "--config", str(conf), "--out", str(out), "--workers", str(workers)])
            if code:
                return False, f"sweep exit {code}"
            outs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        if outs[0] != outs[1]:
            return False, "outputs differ between worker counts"
        for name, blob in outs[0].items():
            if not blob.startswith((b"cell_id,", b"replica,")):
                return False, f"{name} lacks a header"
        run1 = tmp / "abm1"
        if main(["abm", "--config", str(conf), "--out", str(run1)]):
            return False, "abm failed"
        run2 = tmp / "abm2"
        if main(["abm", "--config", str(run1 / "manifest.txt"), "--out", str(run2)]):
            return False, "abm from manifest failed"
        for p in sorted(run1.glob("*.csv")):
            if p.read_bytes() != (run2 / p.name).read_bytes():
                return False, f"manifest re-run differs in {p.name}"
    return True, ""


def run_checks(cfg: SimConfig | None = None, names: list[str] | None = None) -> list[CheckResult]:
    cfg = SimConfig() if cfg is None else cfg
    out = []
    for name, fn in REGISTRY:
        if names and not any(sel in name for sel in names):
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn(cfg)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
