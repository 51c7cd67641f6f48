"""Maximise the secret key rate over dead time (and signal intensity).

The gate count N = floor((t_S - dt) F) makes S(dt) piecewise smooth: it
is smooth on each interval of constant N and drops at the right end of
every interval, where N loses one gate. The dead-time search therefore

1. scans a 64-point logarithmic grid snapped to interval right ends
   (S restricted to those ends is smooth, so the scan sees the envelope
   and not the sawtooth),
2. takes the bracket around the best grid point,
3. evaluates S at every constant-N interval end inside the bracket, and
4. runs a bounded scalar search inside the best three intervals.

Joint (dt, mu1) maximisation seeds from a 64 x 64 grid and then
alternates the two one-dimensional searches (coordinate ascent).
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvariantError
from .rates import compute_rates
from .scenario import Scenario

__all__ = [
    "OptimizationProblem",
    "OptimizationResult",
    "MODES",
    "key_rate_surface",
    "optimize_dead_time",
    "optimize_joint",
    "optimize",
    "scan_distance",
]

MODES = ("dead-time-only", "joint", "fixed-mu1m")

DEAD_TIME_TOL = 10e-9
MU_TOL = 1e-4
GRID_POINTS = 64
MAX_ROUNDS = 20
_TIE_RTOL = 1e-15
_MAX_PIECES = 20_000


@dataclass(frozen=True)
class OptimizationProblem:
    """What to optimise and within which bounds.

    Parameters
    ----------
    scenario : Scenario
        Base configuration. Its link length is the distance optimised at.
    dead_time_bounds : (float, float), optional
        Search interval for the dead time; defaults to (t_F, t_S / 2).
    mu_bounds : (float, float), optional
        Search interval for mu1 in joint mode; defaults to (mu1_min, 1).
    mode : str
        ``dead-time-only``, ``joint`` or ``fixed-mu1m``.
    mu1_min : float, optional
        Smallest admissible signal intensity. In ``fixed-mu1m`` mode mu1 is
        held at this value at every distance, which limits exposure to
        photon-number-splitting attacks. It has no default: choose it for
        the link at hand.
    """

    scenario: Scenario
    dead_time_bounds: tuple = None
    mu_bounds: tuple = None
    mode: str = "dead-time-only"
    mu1_min: float = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvariantError(f"mode must be one of {MODES}, got {self.mode!r}")
        timing = self.scenario.timing
        t_f = float(timing.gate_period)
        t_s = float(timing.frame_duration)
        lo, hi = self.dead_time_bounds if self.dead_time_bounds is not None else (t_f, 0.5 * t_s)
        if not (t_f * (1 - 1e-12) <= lo < hi < t_s):
            raise InvariantError(f"need t_F <= dt_lo < dt_hi < t_S, got ({lo}, {hi})")
        object.__setattr__(self, "dead_time_bounds", (float(lo), float(hi)))

        decoys = float(sum(np.asarray(m, dtype=float) for m in self.scenario.source.mean_photon_numbers[1:]))
        if self.mu1_min is not None and not self.mu1_min > decoys:
            raise InvariantError("mu1_min must exceed the sum of the decoy intensities")
        if self.mode == "fixed-mu1m" and self.mu1_min is None:
            raise InvariantError("fixed-mu1m mode needs mu1_min")
        if self.mode == "joint":
            if not self.scenario.protocol.decoy:
                raise InvariantError("joint optimisation is defined for decoy protocols")
            if self.mu_bounds is None:
                floor = self.mu1_min if self.mu1_min is not None else decoys + 1e-6
                object.__setattr__(self, "mu_bounds", (float(floor), 1.0))
            mlo, mhi = self.mu_bounds
            if not (decoys < mlo <= mhi):
                raise InvariantError("mu bounds must satisfy sum(decoys) < mu_lo <= mu_hi")
            object.__setattr__(self, "mu_bounds", (float(mlo), float(mhi)))

    def at_length(self, length) -> OptimizationProblem:
        return replace(self, scenario=self.scenario.with_length(length))


@dataclass(frozen=True)
class OptimizationResult:
    """Optimum found at one distance.

    ``status`` is ``ok``, ``boundary`` (optimum on a bracket end),
    ``no-secure-key`` (S < 0 everywhere searched; ``key_rate`` is the raw
    maximum) or ``failed: <reason>``.
    """

    length: float
    dead_time: float
    mu1: float
    key_rate: float
    afterpulse_prob: float
    evaluations: int
    status: str
    at_boundary: bool = False
    rounds: int = 0


def key_rate_surface(scenario: Scenario, dead_time, mu1=None):
    """Raw secret key rate S for an array of dead times (and optionally a fixed mu1)."""
    sc = scenario.with_dead_time(np.asarray(dead_time, dtype=float))
    if mu1 is not None:
        sc = sc.with_signal(float(mu1))
    return np.asarray(compute_rates(sc, n_max=1).key_rate_raw, dtype=float)


class _Tracker:
    """Counts evaluations and keeps the best point seen so far."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.evaluations = 0
        self.best = None  # (S, dt, mu)

    def offer(self, dts, values, mu):
        # Ties within _TIE_RTOL go to the smaller dead time, then smaller mu.
        for dt, s in zip(np.atleast_1d(dts), np.atleast_1d(values)):
            dt, s = float(dt), float(s)
            if self.best is None:
                self.best = (s, dt, mu)
                continue
            best_s, best_dt, best_mu = self.best
            slack = _TIE_RTOL * abs(best_s)
            smaller = (dt, mu or 0.0) < (best_dt, best_mu or 0.0)
            if s > best_s + slack or (abs(s - best_s) <= slack and smaller):
                self.best = (s, dt, mu)

    def rate(self, dts, mu=None):
        dts = np.atleast_1d(np.asarray(dts, dtype=float))
        values = key_rate_surface(self.scenario, dts, mu)
        self.evaluations += dts.size
        self.offer(dts, values, mu)
        return values


def _piece_ends(lo, hi, timing):
    """Right ends t_S - n t_F of the constant-N intervals strictly inside (lo, hi)."""
    t_s, f = float(timing.frame_duration), float(timing.frequency)
    n_hi = math.floor((t_s - lo) * f + 1e-7)
    n_lo = math.ceil((t_s - hi) * f - 1e-7)
    n = np.arange(max(n_lo, 0), n_hi + 1)
    ends = t_s - n / f
    ends = np.sort(ends[(ends > lo) & (ends < hi)])
    if ends.size > _MAX_PIECES:
        ends = ends[:: math.ceil(ends.size / _MAX_PIECES)]
    return ends


def _snapped_grid(lo, hi, timing):
    """Log grid on [lo, hi] moved to the right end of each point's constant-N interval."""
    t_s, f = float(timing.frame_duration), float(timing.frequency)
    grid = np.geomspace(lo, hi, GRID_POINTS)
    ends = t_s - np.floor((t_s - grid) * f + 1e-7) / f
    snapped = np.clip(np.maximum(ends, grid), lo, hi)
    return np.unique(np.concatenate([[lo], snapped, [hi]]))


def _refine_dead_time(tracker, lo, hi, mu=None):
    """Best dead time in [lo, hi] allowing for the constant-N steps."""
    timing = tracker.scenario.timing
    points = np.concatenate([[lo], _piece_ends(lo, hi, timing), [hi]])
    values = tracker.rate(points, mu)
    # Interval i is (points[i], points[i+1]]; its supremum sits at the right
    # end or in the interior (the left end belongs to the previous interval,
    # except for lo itself).
    right = values[1:]
    ranked = np.argsort(-right, kind="stable")[:3]
    for i in ranked:
        a, b = points[i], points[i + 1]
        if b - a <= 1e-9:
            continue
        minimize_scalar(
            lambda x: -float(tracker.rate([x], mu)[0]), bounds=(a, b), method="bounded", options={"xatol": 1e-9}
        )
    return tracker.best


def _grid_bracket(grid, x):
    j = int(np.clip(np.searchsorted(grid, x), 0, grid.size - 1))
    if j > 0 and abs(grid[j - 1] - x) < abs(grid[j] - x):
        j -= 1
    return grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]


def _finish(problem, tracker, rounds=0):
    s, dt, mu = tracker.best
    sc = _scenario_for(problem).with_dead_time(dt)
    if mu is not None:
        sc = sc.with_signal(mu)
    report = compute_rates(sc, n_max=1)
    lo, hi = problem.dead_time_bounds
    boundary = dt <= lo or dt >= hi
    if problem.mode == "joint" and problem.mu_bounds[0] < problem.mu_bounds[1]:
        boundary = boundary or mu <= problem.mu_bounds[0] or mu >= problem.mu_bounds[1]
    if s < 0:
        status = "no-secure-key"
    elif boundary:
        status = "boundary"
    else:
        status = "ok"
    return OptimizationResult(
        length=float(problem.scenario.link.length),
        dead_time=dt,
        mu1=float(report.mu1),
        key_rate=s,
        afterpulse_prob=float(report.solutions[0].afterpulse_prob),
        evaluations=tracker.evaluations,
        status=status,
        at_boundary=boundary,
        rounds=rounds,
    )


def _scenario_for(problem):
    if problem.mode == "fixed-mu1m":
        return problem.scenario.with_signal(problem.mu1_min)
    return problem.scenario


def optimize_dead_time(problem: OptimizationProblem) -> OptimizationResult:
    """Dead time maximising S at the problem's distance (mu1 as configured).

    In ``fixed-mu1m`` mode mu1 is pinned to ``mu1_min`` first.
    """
    if problem.mode == "joint":
        problem = replace(problem, mode="dead-time-only")
    tracker = _Tracker(_scenario_for(problem))
    lo, hi = problem.dead_time_bounds
    grid = _snapped_grid(lo, hi, tracker.scenario.timing)
    tracker.rate(grid)
    a, b = _grid_bracket(grid, tracker.best[1])
    _refine_dead_time(tracker, a, b)
    return _finish(problem, tracker)


def optimize_joint(problem: OptimizationProblem) -> OptimizationResult:
    """Jointly maximise S over dead time and signal intensity (decoy protocols)."""
    if problem.mode != "joint":
        raise InvariantError("optimize_joint needs mode='joint'")
    mlo, mhi = problem.mu_bounds
    if mlo == mhi:
        fixed = replace(problem, scenario=problem.scenario.with_signal(mlo), mode="dead-time-only")
        return optimize_dead_time(fixed)

    tracker = _Tracker(problem.scenario)
    lo, hi = problem.dead_time_bounds
    dt_grid = _snapped_grid(lo, hi, problem.scenario.timing)
    mu_grid = np.linspace(mlo, mhi, GRID_POINTS)
    for mu in mu_grid:
        tracker.rate(dt_grid, float(mu))
    cell = mu_grid[1] - mu_grid[0]

    _, dt, mu = tracker.best
    rounds = 0
    for rounds in range(1, MAX_ROUNDS + 1):
        a, b = _grid_bracket(dt_grid, dt)
        _refine_dead_time(tracker, a, b, mu)
        dt_new = tracker.best[1]
        mu_new = tracker.best[2]
        ma, mb = max(mlo, mu_new - cell), min(mhi, mu_new + cell)
        tracker.rate([dt_new], ma)
        tracker.rate([dt_new], mb)
        minimize_scalar(
            lambda m: -float(tracker.rate([dt_new], float(m))[0]),
            bounds=(ma, mb),
            method="bounded",
            options={"xatol": 1e-6},
        )
        _, dt_next, mu_next = tracker.best
        done = abs(dt_next - dt) < DEAD_TIME_TOL and abs(mu_next - mu) < MU_TOL
        dt, mu = dt_next, mu_next
        if done and rounds > 1:
            break
    return _finish(problem, tracker, rounds)


def optimize(problem: OptimizationProblem) -> OptimizationResult:
    """Dispatch on ``problem.mode``."""
    if problem.mode == "joint":
        return optimize_joint(problem)
    return optimize_dead_time(problem)


def _safe_optimize(args):
    problem, length = args
    try:
        return optimize(problem.at_length(length))
    except Exception as exc:  # collected per distance, never fatal to a sweep
        return OptimizationResult(
            length=length,
            dead_time=math.nan,
            mu1=math.nan,
            key_rate=math.nan,
            afterpulse_prob=math.nan,
            evaluations=0,
            status=f"failed: {type(exc).__name__}: {exc}",
        )


def scan_distance(problem: OptimizationProblem, distances, jobs: int = 1) -> list:
    """Optimise independently at each distance.

    Failures are reported in the ``status`` field instead of raised. With
    ``jobs > 1`` the distances run in a process pool; results come back in
    input order and are identical to a sequential run.
    """
    problems = [(problem, float(d)) for d in distances]
    if jobs > 1 and len(problems) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_safe_optimize, problems))
    return [_safe_optimize(p) for p in problems]
