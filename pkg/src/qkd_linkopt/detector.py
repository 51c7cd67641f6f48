"""Click probability of a gated detector with afterpulsing and dead time.

The corrected total detection probability P_TC = P_T C couples to itself
through the dead-time factor C(P_T) and through the afterpulsing core
probability P_APC(P_TC). The self-consistent value is found by Picard
iteration of

    P_T  <-  1 - (1 - P_N) P_ph0,    P_N = 1 - (1 - p_dc) P_APC,
    P_APC = (1 - P_TC P_af) ** N_a,  P_TC = P_T C,

started from P_T = 1 - (1 - p_dc) P_ph0.

All functions accept numpy arrays in any parameter field and broadcast.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, NumericError, ValidityWarning
from .params import (
    DetectorParams,
    LinkParams,
    PhaseEnsemble,
    SourceEnsemble,
    TimingParams,
    active_gate_count,
    gate_count,
)

__all__ = [
    "DetectionSolution",
    "non_detection_prob",
    "beta_from_counts",
    "beta_branch_average",
    "beta_factor",
    "per_gate_afterpulse",
    "dead_time_factor",
    "solve_fixed_point",
    "solve_detection",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITER",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
_TINY = 1e-300


def non_detection_prob(
    source: SourceEnsemble, phases: PhaseEnsemble, link: LinkParams, det: DetectorParams
):
    """Average probability that no photon is detected at ``det`` in a gate.

    Sums exp(-gamma_ijw mu_k) over intensities k and phase pairs (i, j),
    weighted by eps_k theta_i^A theta_j^B.
    """
    gamma = link.reduced_efficiency(det.efficiency)
    weights = phases.weights()
    interference = phases.interference(det.label)
    total = 0.0
    largest = 0.0
    for eps, mu in zip(source.probabilities, source.mean_photon_numbers):
        mu = np.asarray(mu, dtype=float)
        for w_ij, c_ij in zip(weights.ravel(), interference.ravel()):
            exponent = gamma * c_ij * mu
            total = total + eps * w_ij * np.exp(-exponent)
            largest = np.maximum(largest, exponent)
    if np.any(largest >= 1.0):
        warnings.warn(
            "max(gamma * mu) >= 1: the afterpulsing model is only accurate below 1",
            ValidityWarning,
            stacklevel=2,
        )
    return total


def _beta(n_gates, one_minus_rho, one_minus_rho_n, rho):
    n = np.asarray(n_gates, dtype=float)
    n_a = active_gate_count(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        braces = 1.0 - rho * one_minus_rho_n / (n * one_minus_rho)
        beta = braces / (n_a * one_minus_rho)
    # N = 1 cancels exactly; keep it exact instead of rounding to 1 +- ulp.
    return np.where(n == 1, 1.0, beta)


def beta_from_counts(n_gates, rho):
    """Afterpulsing averaging factor for N gates and per-gate decay ratio rho.

    beta = 1 / (N_a (1 - rho)) * [1 - rho (1 - rho^N) / (N (1 - rho))]
    """
    n = np.asarray(n_gates, dtype=float)
    if np.any(n < 1):
        raise DomainError("dead time exceeds frame: fewer than one gate left")
    rho = np.asarray(rho, dtype=float)
    if np.any((rho <= 0) | (rho >= 1)):
        raise DomainError("rho must lie in (0, 1)")
    return _beta(n, 1.0 - rho, 1.0 - rho**n, rho)


def beta_branch_average(n_gates: int, rho: float) -> float:
    """Direct branch-by-branch average of the afterpulsing decay.

    Evaluates (1 / (N_a N)) sum_{l=0}^{N-1} sum_{m=0}^{N-l-1} rho^m term by
    term. Used as a cross-check of :func:`beta_from_counts`; O(N^2).
    """
    n = int(n_gates)
    if n < 1:
        raise DomainError("dead time exceeds frame: fewer than one gate left")
    total = 0.0
    for branch in range(n):
        total += sum(rho**m for m in range(n - branch))
    return total / (active_gate_count(n) * n)


def beta_factor(timing: TimingParams, det: DetectorParams):
    """beta for the gate count and decay ratio implied by ``timing`` and ``det``."""
    n = gate_count(timing, det.dead_time)
    if np.any(n < 1):
        raise DomainError("dead time exceeds frame: fewer than one gate left")
    x = timing.gate_period * det.decay_rate
    one_minus_rho = -np.expm1(-x)
    return _beta(n, one_minus_rho, -np.expm1(-n * x), np.exp(-x))


def per_gate_afterpulse(timing: TimingParams, det: DetectorParams):
    """Average afterpulsing probability per gate, P_af = beta k Q exp(-k dt)."""
    k = det.decay_rate
    return beta_factor(timing, det) * k * np.asarray(det.afterpulse_amplitude, dtype=float) * np.exp(
        -k * np.asarray(det.dead_time, dtype=float)
    )


def dead_time_factor(p_total, timing: TimingParams, det: DetectorParams):
    """Dead-time correction C = 1 / (P_T (F dt - 1) + 1).

    A dead time shorter than one gate period blinds no gate, so F dt - 1 is
    floored at zero (C = 1).
    """
    gates_dead = np.asarray(timing.frequency, dtype=float) * np.asarray(det.dead_time, dtype=float)
    denom = np.asarray(p_total, dtype=float) * np.maximum(gates_dead - 1.0, 0.0) + 1.0
    return 1.0 / denom


@dataclass(frozen=True)
class DetectionSolution:
    """Self-consistent detection probabilities of one detector.

    Array-valued when any input was an array.
    """

    non_detection_ph: object
    total: object
    corrected_total: object
    dead_time_factor: object
    noise_prob: object
    afterpulse_core: object
    afterpulse_prob: object
    per_gate_afterpulse: object
    averaging_factor: object
    decay_ratio: object
    gate_count: object
    active_gates: object
    iterations: int
    converged: bool
    residual: object
    subgate_dead_time: bool


def solve_fixed_point(
    p_ph0,
    det: DetectorParams,
    timing: TimingParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DetectionSolution:
    """Solve the coupled afterpulsing / dead-time equations for a given P_ph0.

    Parameters
    ----------
    p_ph0 : float or ndarray
        Probability that no photon is detected in a gate.
    det, timing
        Detector and gate timing.
    tol : float
        Relative change |P_T(l+1) - P_T(l)| / P_T(l) below which to stop.
    max_iter : int
        Iteration cap; exceeding it raises :class:`ConvergenceError`.
    """
    if not tol > 0:
        raise DomainError("tol must be > 0")
    p_ph0 = np.asarray(p_ph0, dtype=float)
    pdc = np.asarray(det.dark_count_prob, dtype=float)
    p_af = per_gate_afterpulse(timing, det)
    n = gate_count(timing, det.dead_time)
    n_a = active_gate_count(n)

    # Work with logs of the complements: P_TC P_af is often ~1e-12, so
    # (1 - x)^N_a would lose most digits before the power amplifies the error.
    with np.errstate(divide="ignore"):
        log_silent = np.log1p(-pdc) + np.log(p_ph0)

    def log_apc(p_t):
        return n_a * np.log1p(-p_t * dead_time_factor(p_t, timing, det) * p_af)

    def step(p_t):
        return -np.expm1(log_silent + log_apc(p_t))

    p_t = -np.expm1(log_silent)
    change = np.inf
    for iteration in range(1, max_iter + 1):
        p_next = step(p_t)
        if not np.all(np.isfinite(p_next)):
            raise NumericError("non-finite detection probability during iteration")
        scale = np.where(p_t < _TINY, 1.0, p_t)
        change = np.max(np.abs(p_next - p_t) / scale)
        p_t = p_next
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"fixed point did not converge in {max_iter} iterations (last change {change:.3e})",
            residual=float(change),
            iterations=max_iter,
        )

    c = dead_time_factor(p_t, timing, det)
    p_tc = p_t * c
    log_core = log_apc(p_t)
    p_apc = np.exp(log_core)
    p_n = -np.expm1(np.log1p(-pdc) + log_core)
    residual = np.abs(p_t - step(p_t))
    x = timing.gate_period * det.decay_rate
    subgate = bool(np.any(np.asarray(timing.frequency) * np.asarray(det.dead_time) < 1.0))
    return DetectionSolution(
        non_detection_ph=p_ph0,
        total=p_t,
        corrected_total=p_tc,
        dead_time_factor=c,
        noise_prob=p_n,
        afterpulse_core=p_apc,
        afterpulse_prob=-np.expm1(log_core),
        per_gate_afterpulse=p_af,
        averaging_factor=beta_factor(timing, det),
        decay_ratio=np.exp(-x),
        gate_count=n,
        active_gates=n_a,
        iterations=iteration,
        converged=True,
        residual=residual,
        subgate_dead_time=subgate,
    )


def solve_detection(
    source: SourceEnsemble,
    phases: PhaseEnsemble,
    link: LinkParams,
    det: DetectorParams,
    timing: TimingParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DetectionSolution:
    """Corrected detection probabilities of ``det`` behind the interferometer."""
    p_ph0 = non_detection_prob(source, phases, link, det)
    return solve_fixed_point(p_ph0, det, timing, tol=tol, max_iter=max_iter)
