import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerlab.core import (AnnihilatedVectorError, PowerLabError, StopRule,
                           oracle_eigh, random_unit, sin2_error)
from powerlab.matgen import Spectrum, synth_covariance
from powerlab.solvers import (DMPowerConfig, MomentumConfig, check_rho_precision,
                              dmpower, lanczos, oracle_beta, power_method,
                              power_momentum, powerm_bound, practical_J_bound,
                              simultaneous_iteration)


def _instance(seed, sp=None):
    sp = sp or Spectrum.plateau(10)
    inst = synth_covariance(sp, 1000, seed)
    rng = np.random.default_rng(seed + 1)
    return inst, random_unit(sp.d, rng), random_unit(sp.d, rng)


# --- power_method -----------------------------------------------------------

def test_power_closed_form():
    A = np.diag([1.0, 0.5])
    q0 = np.array([1.0, 1.0]) / math.sqrt(2)
    rep = power_method(A, q0, StopRule("max-iterations", max_iter=6),
                       keep_iterates=True)
    e1 = np.array([1.0, 0.0])
    for k, q in enumerate(rep.iterates):
        expected = 0.25 ** k / (1 + 0.25 ** k)
        assert sin2_error(q, e1) == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert sin2_error(rep.iterates[1], e1) == pytest.approx(0.2, rel=1e-12)


def test_power_identity_rayleigh_rule():
    q0 = random_unit(4, np.random.default_rng(0))
    rep = power_method(np.eye(4), q0, StopRule("rayleigh-distance", 1e-12))
    assert rep.converged and rep.iterations_total == 1
    assert np.allclose(rep.estimate.vector, q0)
    assert rep.estimate.value == pytest.approx(1.0)
    assert rep.iterations_pre_momentum == 0 and rep.beta_used is None


def test_power_annihilated():
    with pytest.raises(AnnihilatedVectorError):
        power_method(np.diag([1.0, 0.0]), np.array([0.0, 1.0]))


def test_power_cap_reports_not_converged():
    inst, q0, _ = _instance(0)
    rep = power_method(inst.covariance, q0, StopRule("iterate-distance", 1e-12, 5))
    assert not rep.converged and rep.iterations_total == 5


def test_power_rayleigh_monotone():
    inst, q0, _ = _instance(3)
    rep = power_method(inst.covariance, q0, StopRule("max-iterations", max_iter=60),
                       keep_iterates=True)
    nus = [float(q @ inst.covariance @ q) for q in rep.iterates]
    assert all(b >= a - 1e-12 for a, b in zip(nus, nus[1:]))


def test_power_trajectory_recorded():
    inst, q0, _ = _instance(1)
    rep = power_method(inst.covariance, q0, StopRule("iterate-distance", 1e-6),
                       record=True)
    assert len(rep.trajectory) == rep.iterations_total
    assert rep.trajectory[-1][1] <= 1e-6


# --- power_momentum ---------------------------------------------------------

def test_momentum_beta_zero_matches_power():
    inst, q0, _ = _instance(2)
    stop = StopRule("iterate-distance", 1e-9)
    a = power_method(inst.covariance, q0, stop, keep_iterates=True)
    b = power_momentum(inst.covariance, q0, MomentumConfig(0.0), stop,
                       keep_iterates=True)
    assert a.iterations_total == b.iterations_total
    assert max(np.max(np.abs(x - y)) for x, y in zip(a.iterates, b.iterates)) <= 1e-14
    assert b.beta_used == 0.0


def test_momentum_first_step_is_vanilla():
    inst, q0, _ = _instance(4)
    cap = StopRule("max-iterations", max_iter=1)
    a = power_method(inst.covariance, q0, cap)
    b = power_momentum(inst.covariance, q0, MomentumConfig(0.2), cap)
    assert np.allclose(a.estimate.vector, b.estimate.vector, atol=1e-15)


def test_momentum_config_validation():
    with pytest.raises(PowerLabError):
        MomentumConfig(-0.1)


def test_momentum_divergent_beta_runs_to_cap():
    inst, q0, _ = _instance(5)
    rep = power_momentum(inst.covariance, q0, MomentumConfig(0.9),
                         StopRule("iterate-distance", 1e-9, 300))
    assert not rep.converged and rep.iterations_total == 300


def test_joint_scaling_is_linear_recurrence():
    # with joint scaling, q_k is parallel to p_k(A) q0 where
    # p_k = A p_{k-1} - beta p_{k-2}, p_0 = q0, p_{-1} = 0
    A = np.diag([1.0, 0.9, 0.5])
    q0 = np.ones(3) / math.sqrt(3)
    beta = 0.2
    rep = power_momentum(A, q0, MomentumConfig(beta, joint_scaling=True),
                         StopRule("max-iterations", max_iter=15), keep_iterates=True)
    p_prev, p = np.zeros(3), q0.copy()
    for q in rep.iterates[1:]:
        p_prev, p = p, A @ p - beta * p_prev
        assert sin2_error(q, p / np.linalg.norm(p)) <= 1e-14


def test_momentum_speedup_over_vanilla():
    its_v, its_m = [], []
    for seed in range(10):
        inst, q0, _ = _instance(seed)
        stop = StopRule("iterate-distance", 1e-9)
        its_v.append(power_method(inst.covariance, q0, stop).iterations_total)
        its_m.append(power_momentum(inst.covariance, q0, MomentumConfig(0.2025),
                                    stop).iterations_total)
    assert np.mean(its_m) < 0.7 * np.mean(its_v)


# --- powerm_bound -----------------------------------------------------------

def test_bound_zeroth_power():
    assert powerm_bound(0, 1.0, 0.9, 0.21, 0.5) == pytest.approx(4 / 0.25)


def test_bound_beta_zero_is_vanilla_rate():
    assert powerm_bound(7, 1.0, 0.6, 0.0, 0.3) == pytest.approx(0.6 ** 14 / 0.09)


def test_bound_at_optimal_beta():
    # 2 sqrt(beta) = lambda2 falls in the second case: 4 * (0.9 / (1 + sqrt(0.19)))^20
    expected = 4 * (0.9 / (1 + math.sqrt(0.19))) ** 20
    assert powerm_bound(10, 1.0, 0.9, 0.2025, 0.5) == pytest.approx(expected, rel=1e-12)
    # approaching from above gives the first-case value 16 * (...)^20
    assert powerm_bound(10, 1.0, 0.9, 0.2025 + 1e-13, 0.5) == pytest.approx(
        0.0014013524964315608, rel=1e-9)


def test_bound_outside_region():
    with pytest.raises(PowerLabError, match="outside guarantee region"):
        powerm_bound(1, 1.0, 0.9, 0.26, 0.5)


def test_bound_dominates_joint_recurrence_strict_region():
    sp = Spectrum.plateau(10)
    beta = 0.22   # lambda2 < 2 sqrt(beta) <= lambda1
    for seed in range(20):
        inst, q0, _ = _instance(seed)
        v1 = inst.eigenvectors[:, 0]
        ov = abs(float(q0 @ v1))
        rep = power_momentum(inst.covariance, q0, MomentumConfig(beta, True),
                             StopRule("max-iterations", max_iter=120),
                             keep_iterates=True)
        for k, q in enumerate(rep.iterates):
            assert sin2_error(q, v1) <= powerm_bound(k, 1.0, 0.9, beta, ov) + 1e-9


# --- dmpower ----------------------------------------------------------------

def test_dmpower_exact_inputs():
    A = np.diag([1.0, 0.5, 0.25])
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    rep = dmpower(A, e1, e2, DMPowerConfig(rho=1e-3, eps=1e-9))
    assert all(m == 0.5 for m in rep.mu_trace)
    assert rep.lambda2_estimate == 0.5
    assert rep.beta_used == 0.0625


def test_dmpower_lambda2_accuracy():
    errs = []
    for seed in range(10):
        inst, q0, w0 = _instance(seed)
        rep = dmpower(inst.covariance, q0, w0, DMPowerConfig(rho=1e-9, eps=1e-9))
        assert rep.converged
        assert rep.beta_used == pytest.approx(rep.lambda2_estimate ** 2 / 4)
        errs.append(abs(rep.lambda2_estimate - 0.9))
        assert sin2_error(rep.estimate.vector, inst.eigenvectors[:, 0]) <= 1e-12
    assert np.mean(errs) <= 5e-4


def test_dmpower_report_accounting():
    inst, q0, w0 = _instance(7)
    rep = dmpower(inst.covariance, q0, w0, DMPowerConfig(rho=1e-4, eps=1e-8))
    assert rep.iterations_total == rep.iterations_pre_momentum + rep.iterations_momentum
    assert rep.iterations_pre_momentum == len(rep.mu_trace) >= 2
    assert abs(rep.mu_trace[-1] - rep.mu_trace[-2]) <= 1e-4


def test_dmpower_modes():
    inst, q0, w0 = _instance(8)
    A = inst.covariance
    fixed = dmpower(A, q0, w0, DMPowerConfig(rho_mode="fixed-J", J=17, eps=1e-8))
    assert fixed.iterations_pre_momentum == 17
    wd = dmpower(A, q0, w0, DMPowerConfig(rho=1e-3, rho_mode="w-diff", eps=1e-8))
    assert wd.converged and abs(wd.lambda2_estimate - 0.9) < 0.05


def test_dmpower_config_validation():
    with pytest.raises(PowerLabError):
        DMPowerConfig(rho=0.0)
    with pytest.raises(PowerLabError):
        DMPowerConfig(rho_mode="fixed-J")
    with pytest.raises(PowerLabError):
        DMPowerConfig(rho_mode="other")


def test_dmpower_phase_cap():
    inst, q0, w0 = _instance(9)
    rep = dmpower(inst.covariance, q0, w0, DMPowerConfig(rho=1e-12, eps=1e-9,
                                                         max_pre=3))
    assert not rep.converged


def test_dmpower_beta_window():
    sp = Spectrum.plateau(10)
    for seed in range(100):
        inst, q0, w0 = _instance(seed)
        rep = dmpower(inst.covariance, q0, w0, DMPowerConfig(rho=1e-6, eps=1e-6))
        assert 0.81 / 4 - 0.1 <= rep.beta_used < 0.25
        assert check_rho_precision(rep.lambda2_estimate, sp)


def test_dmpower_determinism():
    inst, q0, w0 = _instance(10)
    a = dmpower(inst.covariance, q0, w0)
    b = dmpower(inst.covariance, q0, w0)
    assert a.iterations_total == b.iterations_total
    assert np.array_equal(a.estimate.vector, b.estimate.vector)


def test_perturbation_decays_along_pre_momentum():
    from powerlab.core import perturbation_norm
    inst, q0, w0 = _instance(12, Spectrum((1.0, 0.9, 0.8, 0.7, 0.6)))
    A, v1 = inst.covariance, inst.eigenvectors[:, 0]
    rep = dmpower(A, q0, w0, DMPowerConfig(rho_mode="fixed-J", J=60, eps=1e-6),
                  keep_iterates=True)
    qs = [q for q, _ in rep.pre_iterates]
    g = [perturbation_norm(A, float(q @ A @ q), q, 1.0, v1) for q in qs]
    # geometric decay holds once the iterate is within 45 degrees of v1;
    # before that sin(theta) saturates near 1 and the ratio approaches 1
    ratios = [g[k + 1] / g[k] for k in range(5, len(g) - 1)
              if g[k] > 1e-13 and sin2_error(qs[k], v1) <= 0.5]
    assert len(ratios) > 20 and max(ratios) <= 0.9 + 0.05


# --- simultaneous iteration ------------------------------------------------

def test_simultaneous_diag():
    rep = simultaneous_iteration(np.diag([3.0, 2.0, 1.0]), 2,
                                 StopRule("iterate-distance", 1e-10), seed=1)
    assert rep.converged
    assert [e.value for e in rep.estimates] == pytest.approx([3.0, 2.0], abs=1e-9)


def test_simultaneous_k1_is_power():
    inst, q0, _ = _instance(11)
    stop = StopRule("iterate-distance", 1e-9)
    a = power_method(inst.covariance, q0, stop)
    b = simultaneous_iteration(inst.covariance, 1, stop, q0=q0)
    assert a.iterations_total == b.iterations
    assert np.allclose(a.estimate.vector, b.estimates[0].vector, atol=1e-14)


def test_simultaneous_rank_collapse():
    with pytest.raises(AnnihilatedVectorError):
        simultaneous_iteration(np.diag([1.0, 0.0, 0.0]), 2, seed=0)


def test_simultaneous_block_size():
    with pytest.raises(PowerLabError):
        simultaneous_iteration(np.eye(3), 4)


# --- lanczos ----------------------------------------------------------------

def test_lanczos_one_step_is_rayleigh():
    inst, q0, _ = _instance(13)
    rep = lanczos(inst.covariance, q0, 1)
    assert rep.estimate.value == pytest.approx(float(q0 @ inst.covariance @ q0),
                                               abs=1e-14)
    assert rep.iterations_total == 1


def test_lanczos_full_exact():
    A = np.diag(np.arange(8.0, 0.0, -1.0))
    q0 = np.ones(8) / math.sqrt(8)
    rep = lanczos(A, q0, 8)
    assert rep.estimate.value == pytest.approx(8.0, abs=1e-8)
    assert rep.converged


def test_lanczos_d100_converges_in_d_steps():
    sp = Spectrum.plateau(100, head=(1.0, 0.99), rest=0.98)
    inst, q0, _ = _instance(14, sp)
    rep = lanczos(inst.covariance, q0, 100, tol=1e-2)
    assert rep.converged and rep.iterations_total <= 100
    assert rep.estimate.value == pytest.approx(1.0, abs=1e-8)


def test_lanczos_bad_m():
    with pytest.raises(PowerLabError):
        lanczos(np.eye(3), np.ones(3) / math.sqrt(3), 4)


def test_lanczos_restarts_count_steps():
    inst, q0, _ = _instance(15)
    rep = lanczos(inst.covariance, q0, 2, tol=1e-12, restarts=5)
    assert rep.iterations_total <= 12


# --- precision checks -------------------------------------------------------

def test_check_rho_precision_examples():
    sp = Spectrum.plateau(10)
    assert check_rho_precision(0.9, sp)
    assert check_rho_precision(1.0, sp)
    assert not check_rho_precision(0.79, sp)


def test_practical_J_unit_logs():
    # alpha = 1; tan^2(theta0)/(delta alpha2) = e and d tau / rho = e
    tau, d = 1.2, 1
    rho = d * tau / math.e
    delta = min(rho, 1 / (tau * math.sqrt(d)))
    theta0 = math.atan(math.sqrt(math.e * delta))
    assert practical_J_bound(1.0, 1.0, rho, tau, d, theta0) == 2


def test_practical_J_example():
    # delta = min(0.1, 0.05); 10 ln(200) + 10 ln(2000) = 128.99...
    assert practical_J_bound(0.1, 0.1, 0.1, 2, 100, math.pi / 4) == 129


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.01, 0.5))
def test_practical_J_monotone_in_alpha1(a1, a2):
    rho = 0.01
    j1 = practical_J_bound(a1, a2, rho, 2, 50, 1.0)
    j2 = practical_J_bound(a1 / 2, a2, rho, 2, 50, 1.0)
    assert j2 > j1


def test_practical_J_precondition():
    with pytest.raises(PowerLabError):
        practical_J_bound(0.01, 0.1, 0.2, 2, 10, 1.0)


def test_practical_J_budget_is_sufficient():
    sp = Spectrum((1.0, 0.8, 0.6, 0.6, 0.6))
    inst, q0, w0 = _instance(16, sp)
    v1 = inst.eigenvectors[:, 0]
    theta0 = math.acos(abs(float(q0 @ v1)))
    J = practical_J_bound(0.2, 0.2, 0.05, 2, 5, theta0)
    rep = dmpower(inst.covariance, q0, w0, DMPowerConfig(rho_mode="fixed-J", J=J,
                                                         eps=1e-9))
    assert abs(rep.lambda2_estimate - 0.8) <= 0.05
    assert rep.converged


def test_oracle_beta():
    assert oracle_beta(np.diag([1.0, 0.9, 0.1])) == pytest.approx(0.2025, abs=1e-14)
