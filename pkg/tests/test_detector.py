import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qkd_linkopt.detector import (
    beta_branch_average,
    beta_factor,
    beta_from_counts,
    dead_time_factor,
    non_detection_prob,
    per_gate_afterpulse,
    solve_detection,
    solve_fixed_point,
)
from qkd_linkopt.errors import ConvergenceError, DomainError, NumericError, ValidityWarning
from qkd_linkopt.params import LinkParams, PhaseEnsemble, SourceEnsemble, TimingParams
from qkd_linkopt.presets import ID201

TIMING = TimingParams(5e6, 500e-6, 1e-3)
LINK0 = LinkParams(0.2, 0.0, 0.5)
PHASES = PhaseEnsemble()


# --- non-detection probability ------------------------------------------------


def test_no_photons_means_no_detection():
    src = SourceEnsemble((0.0,), (1.0,))
    assert non_detection_prob(src, PHASES, LINK0, ID201) == 1.0


def test_zero_efficiency_means_no_detection():
    src = SourceEnsemble.single(0.7)
    assert non_detection_prob(src, PHASES, LINK0, ID201.replace(efficiency=0.0)) == 1.0


@pytest.mark.parametrize("w", [0, 1])
def test_non_detection_matches_term_by_term_sum(w):
    src = SourceEnsemble.single(0.4)
    det = ID201.replace(label=w)
    expected = oracles.p_ph0_mp(0.0932, 1.0, 0.5, (0.4,), (1.0,), w)
    assert non_detection_prob(src, PHASES, LINK0, det) == pytest.approx(expected, rel=1e-14)


def test_non_detection_decoy_ensemble_matches_oracle():
    src = SourceEnsemble((0.4, 0.001, 0.0), (0.93, 0.05, 0.02))
    link = LinkParams(0.2, 30.0, 0.5)
    expected = oracles.p_ph0_mp(0.0932, 10 ** (-0.6), 0.5, (0.4, 0.001, 0.0), (0.93, 0.05, 0.02), 0)
    assert non_detection_prob(src, PHASES, link, ID201) == pytest.approx(expected, rel=1e-14)


def test_validity_warning_for_bright_pulses():
    src = SourceEnsemble.single(3.0)
    with pytest.warns(ValidityWarning):
        non_detection_prob(src, PHASES, LinkParams(0.2, 0.0, 1.0), ID201.replace(efficiency=0.5))


# --- beta ---------------------------------------------------------------------


@pytest.mark.parametrize("rho", [1e-6, 0.1, 0.5, 0.9, 0.999999])
def test_beta_single_gate_is_one(rho):
    assert beta_from_counts(1, rho) == 1.0


def test_beta_small_rho_limit():
    for n in (2, 10, 100):
        assert beta_from_counts(n, 1e-12) == pytest.approx(2 / (n + 1), rel=1e-10)


def test_beta_n4_rho_half_against_branch_sum():
    # (1/(2.5*4)) * (1.875 + 1.75 + 1.5 + 1) = 0.6125
    assert beta_from_counts(4, 0.5) == pytest.approx(0.6125, rel=1e-15)
    assert beta_branch_average(4, 0.5) == pytest.approx(0.6125, rel=1e-15)


@given(st.integers(1, 64), st.floats(0.01, 0.99))
def test_beta_closed_form_equals_branch_sum(n, rho):
    assert beta_from_counts(n, rho) == pytest.approx(oracles.beta_double_sum(n, rho), rel=1e-12)


def test_beta_rejects_dead_time_beyond_frame():
    with pytest.raises(DomainError, match="dead time exceeds frame"):
        beta_from_counts(0, 0.5)
    with pytest.raises(DomainError, match="dead time exceeds frame"):
        beta_factor(TIMING, ID201.replace(dead_time=600e-6))


def test_beta_factor_matches_long_frame_oracle():
    n = 2450
    rho = math.exp(-1 / (5e6 * 71.5e-6))
    assert beta_factor(TIMING, ID201) == pytest.approx(oracles.beta_linear(n, rho), rel=1e-12)


# --- per-gate afterpulsing and dead-time factor -----------------------------------


def test_per_gate_afterpulse_zero_amplitude():
    assert per_gate_afterpulse(TIMING, ID201.replace(afterpulse_amplitude=0.0)) == 0.0


def test_per_gate_afterpulse_vanishes_for_long_dead_time():
    long_frame = TimingParams(5e6, 1.0, 1.0)
    assert per_gate_afterpulse(long_frame, ID201.replace(dead_time=0.5)) < 1e-300


def test_per_gate_afterpulse_table_values():
    k = 1 / 71.5e-6
    beta = oracles.beta_linear(2450, math.exp(-k / 5e6))
    expected = beta * k * 15.35e-9 * math.exp(-k * 10e-6)
    assert per_gate_afterpulse(TIMING, ID201) == pytest.approx(expected, rel=1e-12)


def test_dead_time_factor_examples():
    assert dead_time_factor(0.0, TIMING, ID201) == 1.0
    one_gate = ID201.replace(dead_time=1 / 5e6)
    assert dead_time_factor(0.7, TIMING, one_gate) == pytest.approx(1.0, abs=1e-15)
    det = ID201.replace(dead_time=51 / 5e6)
    assert dead_time_factor(0.5, TIMING, det) == pytest.approx(1 / 26, rel=1e-14)


def test_dead_time_below_one_gate_blinds_nothing():
    timing = TimingParams(1e3, 1.0, 1.0)
    assert dead_time_factor(0.3, timing, ID201.replace(dead_time=20e-6)) == 1.0
    assert dead_time_factor(0.3, timing, ID201.replace(dead_time=1e-3)) == 1.0


# --- fixed point ------------------------------------------------------------------


def test_no_noise_no_afterpulse():
    det = ID201.replace(afterpulse_amplitude=0.0, dark_count_prob=0.0)
    sol = solve_fixed_point(0.97, det, TIMING)
    assert sol.noise_prob == 0.0
    assert sol.total == pytest.approx(0.03, rel=1e-14)
    assert sol.afterpulse_core == 1.0
    assert sol.afterpulse_prob == 0.0


def test_dark_only_self_consistency():
    sol = solve_fixed_point(1.0, ID201, TIMING, tol=1e-12)
    p_tc = sol.total * sol.dead_time_factor
    log_apc = sol.active_gates * math.log1p(-p_tc * sol.per_gate_afterpulse)
    rhs = -math.expm1(math.log1p(-ID201.dark_count_prob) + log_apc)
    assert abs(sol.total - rhs) <= 10 * 1e-12 * sol.total


def test_solution_fields_consistent():
    src = SourceEnsemble.single(1.0)
    sol = solve_detection(src, PHASES, LINK0, ID201, TIMING)
    assert sol.converged
    assert sol.corrected_total == pytest.approx(sol.total * sol.dead_time_factor, rel=1e-15)
    assert abs(sol.afterpulse_prob - (1 - sol.afterpulse_core)) < 1e-16
    assert sol.noise_prob == pytest.approx(1 - (1 - ID201.dark_count_prob) * sol.afterpulse_core, rel=1e-12)
    assert 0 < sol.dead_time_factor <= 1
    assert sol.decay_ratio == pytest.approx(math.exp(-1 / (5e6 * 71.5e-6)))
    assert sol.gate_count == 2450 and sol.active_gates == 1225.5
    assert sol.residual <= 10 * 1e-10 * sol.total


@given(
    eta=st.floats(0.01, 0.5),
    pdc=st.floats(1e-8, 1e-3),
    q_amp=st.floats(0.0, 50e-9),
    tau=st.floats(5e-6, 200e-6),
    dt=st.floats(1e-6, 50e-6),
    f=st.sampled_from([5e5, 5e6, 5e7]),
    p_ph0=st.floats(0.5, 1.0),
)
def test_fixed_point_matches_scalar_oracle(eta, pdc, q_amp, tau, dt, f, p_ph0):
    det = ID201.replace(efficiency=eta, dark_count_prob=pdc, afterpulse_amplitude=q_amp, afterpulse_decay=tau, dead_time=dt)
    timing = TimingParams(f, 500e-6, 1e-3)
    sol = solve_fixed_point(p_ph0, det, timing, tol=1e-14)
    ref = oracles.detector_chain(p_ph0, eta, pdc, q_amp, tau, dt, f, 500e-6)
    assert float(sol.total) == pytest.approx(ref["P_T"], rel=1e-9)
    assert float(sol.noise_prob) == pytest.approx(ref["P_N"], rel=1e-9, abs=1e-18)


def test_vectorised_equals_pointwise():
    dts = np.array([2e-6, 5e-6, 10e-6, 20e-6])
    vec = solve_fixed_point(0.99, ID201.replace(dead_time=dts), TIMING, tol=1e-14)
    for n, dt in enumerate(dts):
        one = solve_fixed_point(0.99, ID201.replace(dead_time=dt), TIMING, tol=1e-14)
        assert vec.corrected_total[n] == pytest.approx(float(one.corrected_total), rel=1e-12)


def test_convergence_error_carries_residual():
    with pytest.raises(ConvergenceError) as info:
        solve_fixed_point(0.9, ID201, TimingParams(5e7, 500e-6, 1e-3), tol=1e-15, max_iter=1)
    assert info.value.iterations == 1
    assert info.value.residual > 0


def test_nan_input_raises_numeric_error():
    with pytest.raises(NumericError):
        solve_fixed_point(float("nan"), ID201, TIMING)


def test_subgate_dead_time_flagged():
    sol = solve_fixed_point(0.99, ID201.replace(dead_time=0.1e-6), TIMING)
    assert sol.subgate_dead_time
    assert not solve_fixed_point(0.99, ID201, TIMING).subgate_dead_time


def test_tol_must_be_positive():
    with pytest.raises(DomainError):
        solve_fixed_point(0.99, ID201, TIMING, tol=0.0)


def test_pure_dead_time_loss_monotone():
    dts = np.linspace(0.2e-6, 100e-6, 200)
    det = ID201.replace(afterpulse_amplitude=0.0, dead_time=dts)
    p_tc = solve_fixed_point(0.98, det, TIMING).corrected_total
    assert np.all(np.diff(p_tc) <= 1e-18)


def test_afterpulse_probability_decreasing_in_dead_time():
    dts = np.linspace(1e-6, 200e-6, 200)
    sol = solve_fixed_point(0.98, ID201.replace(dead_time=dts), TIMING)
    assert np.all(np.diff(sol.afterpulse_prob) < 0)


def test_stress_grid_probabilities_in_unit_interval():
    etas = np.array([0.05, 0.1, 0.2])
    lengths = np.arange(0, 151, 10.0)
    src = SourceEnsemble.single(0.5)
    for f in (5e5, 5e6, 5e7):
        timing = TimingParams(f, 500e-6, 1e-3)
        for dt in (2e-6, 5e-6, 10e-6, 20e-6):
            e, L = np.meshgrid(etas, lengths)
            sol = solve_detection(src, PHASES, LinkParams(0.2, L, 0.5), ID201.replace(efficiency=e, dead_time=dt), timing)
            for name in ("total", "corrected_total", "noise_prob", "afterpulse_core", "afterpulse_prob"):
                v = getattr(sol, name)
                assert np.all((v >= 0) & (v <= 1)), name
            assert np.all((sol.dead_time_factor > 0) & (sol.dead_time_factor <= 1))
