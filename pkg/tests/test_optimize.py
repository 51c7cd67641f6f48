import math

import numpy as np
import pytest

from qkd_linkopt import presets
from qkd_linkopt.errors import InvariantError
from qkd_linkopt.optimize import (
    OptimizationProblem,
    key_rate_surface,
    optimize,
    optimize_dead_time,
    optimize_joint,
    scan_distance,
)
from qkd_linkopt.presets import ID201
from qkd_linkopt.rates import compute_rates


def _exhaustive(scenario, step=1e-9):
    t = scenario.timing
    grid = np.arange(float(t.gate_period), 0.5 * float(t.frame_duration) + 1e-12, step)
    s = key_rate_surface(scenario, grid)
    i = int(np.nanargmax(s))
    return grid[i], s[i]


def test_without_afterpulsing_shortest_dead_time_wins():
    sc = presets.standard_bb84(length=30.0, detector=ID201.replace(afterpulse_amplitude=0.0))
    res = optimize(OptimizationProblem(sc))
    assert res.dead_time == pytest.approx(200e-9)
    assert res.status == "boundary" and res.at_boundary


@pytest.mark.parametrize("length", [20.0, 60.0, 100.0])
def test_dead_time_matches_exhaustive_scan(length):
    sc = presets.standard_bb84(length=length)
    dt_grid, s_grid = _exhaustive(sc)
    res = optimize(OptimizationProblem(sc))
    assert abs(res.dead_time - dt_grid) <= 10e-9
    assert res.key_rate >= s_grid - 1e-12 * abs(s_grid)


def test_optimum_dominates_default_dead_time():
    sc = presets.decoy_bb84(frequency=50e6, length=40.0)
    res = optimize(OptimizationProblem(sc))
    assert res.key_rate >= float(compute_rates(sc).key_rate_raw)
    assert res.key_rate == pytest.approx(float(key_rate_surface(sc, [res.dead_time])[0]))


def test_result_reports_afterpulse_probability():
    sc = presets.standard_bb84(length=20.0)
    res = optimize(OptimizationProblem(sc))
    ref = compute_rates(sc.with_dead_time(res.dead_time))
    assert res.afterpulse_prob == pytest.approx(float(ref.solutions[0].afterpulse_prob))
    assert res.evaluations > 0


def test_joint_matches_coarse_grid():
    sc = presets.decoy_bb84(length=30.0)
    prob = OptimizationProblem(sc, mode="joint")
    res = optimize_joint(prob)
    lo, hi = prob.dead_time_bounds
    mlo, mhi = prob.mu_bounds
    dts = np.linspace(lo, hi, 60)
    mus = np.linspace(mlo, mhi, 60)
    best = max((float(key_rate_surface(sc, dts, m).max()), m) for m in mus)
    assert res.key_rate >= best[0]
    assert abs(res.mu1 - best[1]) <= mus[1] - mus[0]


def test_degenerate_mu_bracket_reduces_to_dead_time_only():
    sc = presets.decoy_bb84(length=30.0)
    joint = optimize(OptimizationProblem(sc, mode="joint", mu_bounds=(0.4, 0.4)))
    single = optimize(OptimizationProblem(sc.with_signal(0.4)))
    assert joint.dead_time == single.dead_time
    assert joint.key_rate == single.key_rate


def test_fixed_mu1m_mode_pins_signal():
    sc = presets.decoy_bb84(length=30.0)
    res = optimize(OptimizationProblem(sc, mode="fixed-mu1m", mu1_min=0.3))
    assert res.mu1 == pytest.approx(0.3)
    ref = optimize_dead_time(OptimizationProblem(sc.with_signal(0.3)))
    assert res.key_rate == ref.key_rate


def test_problem_validation():
    sc = presets.decoy_bb84()
    with pytest.raises(InvariantError):
        OptimizationProblem(sc, mode="fixed-mu1m")
    with pytest.raises(InvariantError):
        OptimizationProblem(sc, mode="bogus")
    with pytest.raises(InvariantError):
        OptimizationProblem(sc, dead_time_bounds=(1e-6, 1e-3))
    with pytest.raises(InvariantError):
        OptimizationProblem(sc, mode="joint", mu1_min=1e-4)
    with pytest.raises(InvariantError):
        OptimizationProblem(presets.standard_bb84(), mode="joint")


def test_scan_distance_empty_and_single():
    prob = OptimizationProblem(presets.standard_bb84())
    assert scan_distance(prob, []) == []
    (only,) = scan_distance(prob, [25.0])
    direct = optimize(prob.at_length(25.0))
    assert only == direct


def test_scan_distance_parallel_matches_sequential():
    prob = OptimizationProblem(presets.standard_bb84())
    lengths = [0.0, 40.0, 80.0]
    assert scan_distance(prob, lengths, jobs=2) == scan_distance(prob, lengths, jobs=1)


def test_scan_distance_collects_failures():
    prob = OptimizationProblem(presets.standard_bb84())
    (res,) = scan_distance(prob, [float("nan")])
    assert res.status.startswith("failed:")
    assert math.isnan(res.key_rate)


@pytest.mark.slow
def test_secure_range_grows_as_dark_counts_fall():
    lengths = np.arange(0.0, 301.0, 20.0)
    ranges = []
    for pdc in (1e-5, 1e-6, 1e-7):
        det = ID201.replace(efficiency=0.2, dark_count_prob=pdc)
        prob = OptimizationProblem(presets.decoy_bb84(frequency=50e6, detector=det))
        secure = [r.length for r in scan_distance(prob, lengths) if r.key_rate > 0]
        ranges.append(max(secure))
    assert ranges[0] < ranges[1] < ranges[2]
