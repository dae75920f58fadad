import math

import numpy as np
import pytest

from netschelling import meanfield as mf
from netschelling.config import Mode, SimConfig
from netschelling.core import DecayMode, DomainError, HomophilyFunction, KernelTriple, ParameterError

from oracles import recurrence as oracle

# hand-traced bias run: alpha=0.5, lambda (d, b, s) = (1.2, 1.5, 2.0), gamma=0.5, phi=0.5
BIAS_3_STEPS = [
    # t, p, E_s, E_d, rewired
    (1, 0.7071067811865476, 0.9643524050982966, 0.666737559135599, 0.10206207261596575),
    (2, 0.6393497542761768, 1.1682365667421184, 0.9457847109214232, 0.18146777485073184),
    (3, 0.6688696149246756, 1.3471812595017885, 1.1233663772156892, 0.20247240313535342),
]


def oracle_kernels(cfg):
    ks = cfg.kernels
    return (oracle.weibull(ks.k_s.lam, ks.k_s.gamma), oracle.weibull(ks.k_d.lam, ks.k_d.gamma),
            oracle.weibull(ks.k_b.lam, ks.k_b.gamma))


def test_initial_state():
    s = mf.init_meanfield()
    assert (s.t, s.E_s, s.E_d, s.x) == (0, 0.5, 0.5, 0.5)


@pytest.mark.parametrize("decay_mode", list(DecayMode))
@pytest.mark.parametrize("weak", [False, True])
def test_matches_backward_sum_oracle(decay_mode, weak):
    cfg = SimConfig(decay_mode=decay_mode, mode=Mode.WEAK_TIES if weak else Mode.BASE)
    k_s, k_d, _ = oracle_kernels(cfg)
    ref = oracle.base_or_weak(oracle.power(0.5), k_s, k_d, 25, weak=weak,
                              cohort=decay_mode is DecayMode.COHORT)
    traj = mf.run_trajectory(cfg, 25)
    for s, (t, p, es, ed, x) in zip(traj.states, ref):
        assert s.t == t
        assert abs(s.E_s - es) <= 1e-12 and abs(s.E_d - ed) <= 1e-12 and abs(s.x - x) <= 1e-12
        if p is not None:
            assert abs(s.p - p) <= 1e-12


def test_bias_hand_trace():
    cfg = SimConfig(mode=Mode.BIAS, phi=0.5)
    state = mf.init_meanfield(cfg)
    for t, p, es, ed, moved in BIAS_3_STEPS:
        state = mf.step_bias(state, cfg)
        assert state.t == t
        assert state.p == pytest.approx(p, abs=1e-14)
        assert state.E_s == pytest.approx(es, abs=1e-14)
        assert state.E_d == pytest.approx(ed, abs=1e-14)
        assert state.rewired == pytest.approx(moved, abs=1e-14)


def test_bias_hand_trace_matches_oracle_module():
    k_s, k_d, k_b = oracle_kernels(SimConfig())
    assert oracle.bias_trace(oracle.power(0.5), k_s, k_d, k_b, 0.5, 3) == BIAS_3_STEPS


def test_bias_longer_run_matches_oracle():
    cfg = SimConfig(mode=Mode.BIAS, phi=0.8, kernels=KernelTriple.weibull(1.1, 1.7, 3.0, 0.6))
    k_s, k_d, k_b = oracle_kernels(cfg)
    ref = oracle.bias_trace(oracle.power(0.5), k_s, k_d, k_b, 0.8, 40)
    traj = mf.run_trajectory(cfg, 40)
    for s, (t, p, es, ed, moved) in zip(traj.states[1:], ref):
        assert abs(s.E_s - es) <= 1e-12 and abs(s.E_d - ed) <= 1e-12


def test_symmetric_fixed_point():
    cfg = SimConfig(kernels=KernelTriple.symmetric(0.5))
    traj = mf.run_trajectory(cfg, 10**4)
    target = oracle.fixed_point(oracle.power(0.5))
    assert target == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-14)
    assert abs(traj.states[-1].x - target) < 1e-6


def test_fixed_point_other_function():
    f = HomophilyFunction.log(3.0)
    cfg = SimConfig(f=f, kernels=KernelTriple.symmetric(0.8))
    x = mf.run_trajectory(cfg, 5000).states[-1].x
    assert x == pytest.approx(oracle.fixed_point(f), abs=1e-6)


def test_increments():
    assert mf.base_increments(0.3) == (0.3, 0.7)
    s, d = mf.weak_increments(0.3)
    assert s == pytest.approx(0.3 + 0.09 + 0.49)
    assert d == pytest.approx(0.7 + 2 * 0.21)
    assert mf.weak_increments(1.0) == (2.0, 0.0)
    assert mf.weak_increments(0.0) == (1.0, 1.0)


def test_step_functions_agree_with_run():
    cfg = SimConfig(mode=Mode.WEAK_TIES)
    s = mf.init_meanfield(cfg)
    for _ in range(15):
        s = mf.step(s, cfg)
    assert s.E_d == mf.run_trajectory(cfg, 15).states[-1].E_d


def test_step_does_not_mutate_input():
    cfg = SimConfig(mode=Mode.BIAS, phi=0.5)
    s1 = mf.step(mf.init_meanfield(cfg), cfg)
    before = s1.cohorts.mass.copy()
    mf.step(s1, cfg)
    assert np.array_equal(before, s1.cohorts.mass)


@pytest.mark.parametrize("phi", [-0.01, 1.01])
def test_bias_rejects_phi(phi):
    with pytest.raises(ParameterError):
        mf.step_bias(mf.init_meanfield(), SimConfig(), phi)


def test_phi_zero_is_base():
    cfg = SimConfig()
    a = b = mf.init_meanfield(cfg)
    for _ in range(100):
        a, b = mf.step_base(a, cfg), mf.step_bias(b, cfg, 0.0)
        assert abs(a.E_d - b.E_d) <= 1e-15 and abs(a.E_s - b.E_s) <= 1e-15


def test_rewiring_phase_conserves_total_degree():
    cfg = SimConfig(mode=Mode.BIAS, phi=1.0)
    state = mf.init_meanfield(cfg)
    for _ in range(30):
        state = mf.step_bias(state, cfg)
    now = state.t + 1
    led = state.cohorts.copy()
    before = led.mass[:, :now].sum()
    sim_before = led.mass[mf.SIM, :now].sum()
    moved = mf.rewire_phase(led, now, 1.0, mf._kernel_rows(cfg, now)[mf.BIA])
    assert moved > 0
    assert led.mass[:, :now].sum() + moved == pytest.approx(before, rel=1e-15)
    assert led.mass[mf.SIM, :now].sum() == pytest.approx(sim_before - moved, rel=1e-14)


def test_bias_raises_dissimilar_fraction(asym_kernels):
    xs = [mf.run_trajectory(SimConfig(kernels=asym_kernels, mode=Mode.BIAS, phi=phi), 300).states[-1].x
          for phi in (0.0, 0.5, 1.0)]
    assert xs[0] < xs[1] < xs[2]


# -- sensitivity ----------------------------------------------------------------

def test_sensitivity_formulas():
    cfg = SimConfig(mode=Mode.BIAS, phi=0.4)
    traj = mf.run_trajectory(cfg, 30)
    s = traj.states[20]
    fp = cfg.f.derivative(s.x_prev)
    assert mf.sensitivity(s, cfg, Mode.BASE) == fp / 20
    assert mf.sensitivity(s, cfg, Mode.WEAK_TIES) == fp * (1 + s.p_prev) / 20
    k = cfg.kernels.k_s(20)
    assert mf.sensitivity(s, cfg, Mode.BIAS) == pytest.approx(fp * (1 - (0.4 - k)) / 19, rel=1e-15)


def test_sensitivity_needs_two_steps():
    cfg = SimConfig()
    s = mf.step(mf.init_meanfield(cfg), cfg)
    with pytest.raises(DomainError):
        mf.sensitivity(s, cfg)


@pytest.mark.parametrize("mode", list(Mode))
def test_sensitivity_matches_finite_difference(mode):
    cfg = SimConfig(mode=mode, phi=0.6 if mode is Mode.BIAS else 0.0)
    traj = mf.run_trajectory(cfg, 60)
    h = 1e-6
    for s in traj.states[5::7]:
        q0 = 1.0 - s.p_prev
        assert mf.p_given_q_prev(s, cfg, mode, q0) == pytest.approx(s.p, rel=1e-13)
        fd = (mf.p_given_q_prev(s, cfg, mode, q0 + h) - mf.p_given_q_prev(s, cfg, mode, q0 - h)) / (2 * h)
        assert fd == pytest.approx(mf.sensitivity(s, cfg, mode), rel=1e-4)


def test_sensitivity_vanishes():
    traj = mf.run_trajectory(SimConfig(), 5000)
    assert traj.sensitivities()[-1] < 1e-3
    assert traj.sensitivities()[:2] == [None, None]


# -- steady state -----------------------------------------------------------------

def test_steady_state_examples():
    r = mf.steady_state_ed(mf.SteadyStateInput(1.0, 10.0, 0.2))
    assert r.E_d == pytest.approx(2.2) and r.regime == "boundary" and not r.negative
    assert r.ratio == pytest.approx(0.25)
    for phi in (0.0, 0.5):
        r = mf.steady_state_ed(mf.SteadyStateInput(phi, 10.0, 0.2))
        assert r.negative and r.regime == "divergent"


def test_steady_state_formula_by_hand():
    # phi = 0.5, t = 10, q = 0.2: 0.2 + 2 + 90*(-0.5)*7.8 + (-0.5)*8.8
    r = mf.steady_state_ed(mf.SteadyStateInput(0.5, 10.0, 0.2))
    assert r.E_d == pytest.approx(0.2 + 2.0 - 351.0 - 4.4)


@pytest.mark.parametrize("args", [(1.5, 10, 0.2), (-0.1, 10, 0.2), (0.5, 2, 0.2), (0.5, 10, 1.2)])
def test_steady_state_rejects(args):
    with pytest.raises(ParameterError):
        mf.SteadyStateInput(*args)


def test_phi_above_one_message():
    with pytest.raises(ParameterError, match="contradiction"):
        mf.SteadyStateInput(1.5, 10, 0.2)


# -- diagnostics --------------------------------------------------------------------

def test_convergence_diagnostics_plateau():
    traj = mf.run_trajectory(SimConfig(kernels=KernelTriple.symmetric(0.5)), 3000)
    rep = mf.convergence_diagnostics(traj)
    assert rep.fragmentation_time is None
    assert rep.plateau == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-6)
    assert rep.terminal_sensitivity is not None and rep.terminal_sensitivity < 1e-3
    assert any("plateau" in line for line in rep.lines())


def test_convergence_diagnostics_fragmenting():
    cfg = SimConfig(kernels=KernelTriple.weibull(1.01, 30.0, 1000.0, 0.95))
    rep = mf.convergence_diagnostics(mf.run_trajectory(cfg, 2500))
    assert rep.fragmentation_time == 1984
    assert rep.plateau is None


def test_profile():
    assert mf._profile(np.array([1.0, 1.0]))[0] == "constant"
    assert mf._profile(np.array([1.0, 2.0, 3.0]))[0] == "non-decreasing"
    assert mf._profile(np.array([3.0, 2.0, 1.0]))[0] == "non-increasing"
    assert mf._profile(np.array([1.0, 2.0, 1.0, 2.0])) == ("non-monotone", 2)
