from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdmac import fd_model as fm, simcore, topology as tp
from fdmac.chain import S

BASIS_GAP = ("reference model reads the time-fraction alpha as a per-step probability; "
             "see the analysis in the project notes")


def sc(n=20, n_h=4, W=512, **kw):
    return fm.FdScenario.symmetric(n, n_h, W, **kw)


def test_scenario_validation():
    with pytest.raises(ValueError):
        fm.FdScenario(20, 10, 10, 512)
    with pytest.raises(ValueError):
        fm.FdScenario.symmetric(20, 4, 8)  # W below tau_V
    with pytest.raises(ValueError):
        sc(tau_c_variant="other")


def test_client_alpha_idle_channel():
    alpha, Y1, Y2, Y3, Y4 = fm.client_alpha(0.0, 0.0, 0.3, sc())
    assert (Y1, Y2, Y3, Y4, alpha) == (0.0, 0.0, 0.0, 1.0, 1.0)


@given(st.floats(0, 0.05), st.floats(0, 0.05), st.floats(0, 1), st.floats(0, 1))
def test_no_hidden_terminals_ignore_nu(w, wa, nu1, nu2):
    s = sc(n_h=0)
    assert fm.client_alpha(w, wa, nu1, s) == fm.client_alpha(w, wa, nu2, s)
    assert fm.client_beta_p(w, wa, nu1, s) == fm.client_beta_p(w, wa, nu2, s)
    assert fm.ap_beta(w, nu1, s) == fm.ap_beta(w, nu2, s)


def test_ap_alpha_trivia():
    assert fm.ap_alpha(0.0, 0.7, sc()) == (1.0, 0.0, 1.0)
    _, _, p_ap = fm.ap_alpha(0.1, 1.0, fm.FdScenario.symmetric(1, 0, 64))
    assert p_ap == pytest.approx(0.9)


def test_beta_p_trivia():
    assert fm.client_beta_p(0.02, 0.0, 0.9, sc())[0] == 0.0
    assert fm.client_beta_p(0.0, 0.3, 1.0, sc())[1] == pytest.approx(0.7)
    assert fm.ap_beta(0.0, 0.5, sc()) == 0.0


def test_collision_times_hand_arithmetic(timing):
    n, n_c, n_h, H = 20, 15, 4, 11
    pairs = n * (n - 1)
    tau_c = Fraction(n_c**2 + 2 * n_c * n_h + 2 * n_h, pairs) * H + \
        Fraction(n_c**2 - 2 * n_c, pairs) * Fraction(3, 2) * H
    tau_c_ap = Fraction(n_c * n, pairs) * H + Fraction(n_h * n, pairs) * Fraction(3, 2) * H
    ct = fm.collision_times(fm.FdScenario(n, n_c, n_h, 512, timing))
    assert ct.tau_C == pytest.approx(float(tau_c), abs=1e-12)
    assert ct.tau_C_ap == pytest.approx(float(tau_c_ap), abs=1e-12)
    assert float(tau_c) == pytest.approx(18.6855263, abs=1e-6)
    assert ct.delta_T == H
    assert ct.delta_S == pytest.approx((74 - 11) / 20 + (1 - 1 / 20) * (63 - 11))
    assert ct.delta_S_ap == 63
    assert ct.delta_C == pytest.approx(4 / 21 * 11 / 2 + 16 / 21)
    assert ct.delta_C_ap == 1


def test_collision_times_covered_only(timing):
    ct = fm.collision_times(fm.FdScenario(20, 19, 0, 512, timing))
    assert ct.tau_C_ap == pytest.approx(11.0)
    one = fm.collision_times(fm.FdScenario(1, 0, 0, 64, timing))
    assert one.tau_C == one.tau_C_ap == 11.0


def test_prose_variant_differs():
    a = fm.collision_times(sc(n_h=8)).tau_C
    b = fm.collision_times(sc(n_h=8, tau_c_variant="prose")).tau_C
    assert a != b and b > 0


def test_single_client_fixed_point():
    s = fm.solve_fixed_point(fm.FdScenario.symmetric(1, 0, 64))
    assert s.p == pytest.approx(1 - s.omega_ap, abs=1e-9)
    assert s.beta_ap == pytest.approx(s.omega, abs=1e-9)
    assert s.residual <= 1e-10


GRID = [(n, nh, W) for n in (8, 20, 30) for nh in (0, 3, 7) for W in (64, 256, 1024) if nh < n]


@pytest.mark.parametrize("n,nh,W", GRID)
@pytest.mark.parametrize("basis", fm.ATTEMPT_BASES)
def test_fixed_point_invariants(n, nh, W, basis):
    s = fm.solve_fixed_point(sc(n, nh, W, attempt_basis=basis))
    probs = [s.omega, s.omega_ap, s.nu, s.nu_ap, s.alpha, s.beta, s.p, s.alpha_ap, s.beta_ap, s.p_ap]
    assert all(0 <= v <= 1 for v in probs)
    assert s.alpha + s.beta <= 1 + 1e-12 and s.alpha_ap + s.beta_ap <= 1 + 1e-12
    assert s.residual <= 1e-10
    # one more undamped pass moves nothing by more than the tolerance
    again = fm.fixed_point_map([s.omega, s.omega_ap, s.nu], sc(n, nh, W, attempt_basis=basis))
    assert np.max(np.abs(again - [s.omega, s.omega_ap, s.nu])) <= 1e-9
    assert s.throughput_system == pytest.approx(n * s.throughput_client + s.throughput_ap)
    assert 1 < fm.gain_estimate(s, n) <= 2


def test_no_hidden_independent_of_initial_nu():
    base = fm.solve_fixed_point(sc(n_h=0))
    for nu0 in (0.1, 0.5, 0.99):
        s = fm.solve_fixed_point(sc(n_h=0), fm.SolverOptions(start=(base.omega, base.omega_ap, nu0)))
        assert s.throughput_system == pytest.approx(base.throughput_system, abs=1e-9)


def test_attempt_probability_falls_with_window():
    ws = [64, 128, 256, 512, 1024, 2048]
    sols = [fm.solve_fixed_point(sc(n_h=8, W=w)) for w in ws]
    assert np.all(np.diff([s.omega for s in sols]) < 0)
    assert np.all(np.diff([s.omega_ap for s in sols]) < 0)


def test_convergence_error_carries_state():
    with pytest.raises(fm.ConvergenceError) as err:
        fm.solve_fixed_point(sc(), fm.SolverOptions(max_iters=2))
    assert err.value.last is not None and err.value.residual > 0


def test_picard_fallback_damping():
    # x -> 2 - 1.5x diverges undamped at gamma = 1; the fallback converges to 0.8
    x, res, _ = fm.picard(lambda v: 2 - 1.5 * v, np.array([0.0]),
                          fm.SolverOptions(damping=1.0, fallback_damping=0.3, patience=1))
    assert res < 1e-10 and x[0] == pytest.approx(0.8)


def test_multi_start_agrees():
    _, others, flagged = fm.multi_start(sc(n_h=8, W=256))
    assert others and not flagged


def test_gain_estimate_limits():
    s = fm.solve_fixed_point(sc())
    tiny = replace(s, omega=1e-15)
    assert fm.gain_estimate(tiny, 20) == pytest.approx(2.0, abs=1e-10)
    no_ap = replace(s, omega_ap=0.0)
    assert fm.gain_estimate(no_ap, 20) == pytest.approx(1 + 1 / 20)
    with pytest.raises(fm.ModelError):
        fm.gain_estimate(replace(s, omega=0.0, omega_ap=0.0), 20)


def test_throughput_rises_with_clients_without_hidden_terminals():
    thr = [fm.solve_fixed_point(sc(n, 0, 1024)).throughput_system for n in (4, 8, 12, 16, 20, 24, 28)]
    assert np.all(np.diff(thr) > 0)


def test_service_throughput_counts_visits_to_s():
    s = fm.solve_fixed_point(sc())
    assert s.pi[S] > 0 and s.throughput_client > 0


def test_random_topology_estimate():
    ring = tp.ring(10, 40.0)  # no hidden terminals
    est = fm.random_topology_estimate(ring, 256)
    ref = fm.solve_fixed_point(fm.FdScenario.symmetric(10, 0, 256)).throughput_system
    assert est.throughput_system == pytest.approx(ref)
    assert not est.failures
    t = tp.random_disk(12, seed=4)
    est = fm.random_topology_estimate(t, 512)
    assert len(est.per_node) + len(est.failures) == 12


def test_random_topology_failures_reported():
    t = tp.random_disk(8, seed=1)
    with pytest.raises(fm.ModelError, match="all 8"):
        fm.random_topology_estimate(t, 256, opts=fm.SolverOptions(max_iters=1))
