"""Protocol-level rates: clicks per outcome class, sifted rate, QBER, yields, key rate.

Outcome classes follow the phase argument h of the cos^2 interference term:

    1: h = 0 (deterministic click),  2: h = pi/2 (only noise),
    3, 4: h = +-pi/4 or 3pi/4 (balanced).

Double counts between the two detectors are removed by multiplying with the
probability that the other output stays silent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .detector import DEFAULT_MAX_ITER, DEFAULT_TOL, DetectionSolution, solve_detection
from .errors import DomainError, NoSignalError
from .params import DetectorParams, LinkParams, SourceEnsemble
from .scenario import ProtocolKind, Scenario

__all__ = [
    "ClickProbs",
    "SingleProbs",
    "RateReport",
    "signal_click_probs",
    "single_event_probs",
    "sifted_and_qber",
    "proto_yields",
    "single_proto_yields",
    "photon_number_stats",
    "binary_entropy",
    "secret_key_rate",
    "compute_rates",
    "poisson_tail_bound",
]


class ClickProbs(NamedTuple):
    """Click probability of one detector in each of the four outcome classes."""

    p1: object
    p2: object
    p3: object
    p4: object

    def of_class(self, m: int):
        return self[m - 1]


class SingleProbs(NamedTuple):
    """Click probability with the double counts (other detector also clicks) removed."""

    p1: object
    p2: object
    p3: object

    def of_class(self, m: int):
        return self[m - 1]


def _clicks(c, p_noise, survive_full, survive_half):
    return ClickProbs(
        c * (1.0 - (1.0 - p_noise) * survive_full),
        c * p_noise,
        c * (1.0 - (1.0 - p_noise) * survive_half),
        c * (1.0 - (1.0 - p_noise) * survive_half),
    )


def signal_click_probs(
    sol: DetectionSolution, link: LinkParams, source: SourceEnsemble, det: DetectorParams
) -> ClickProbs:
    """Click probabilities p_{m, mu1} of the signal state for one detector."""
    gamma_mu = link.reduced_efficiency(det.efficiency) * np.asarray(source.signal, dtype=float)
    return _clicks(sol.dead_time_factor, sol.noise_prob, np.exp(-gamma_mu), np.exp(-gamma_mu / 2.0))


def single_event_probs(p: ClickProbs, p_other: ClickProbs) -> SingleProbs:
    """Remove double counts: P_1 = p_1 (1 - p_2'), P_2 = p_2 (1 - p_1'), P_3 = p_3 (1 - p_4')."""
    return SingleProbs(p.p1 * (1.0 - p_other.p2), p.p2 * (1.0 - p_other.p1), p.p3 * (1.0 - p_other.p4))


def sifted_and_qber(singles, kind: ProtocolKind):
    """Sifted key rate R and total QBER E from both detectors' single-event probabilities.

    ``singles`` is a pair ``(P^(0), P^(1))`` of :class:`SingleProbs`.
    """
    q = kind.q
    errors = sum(s.p2 for s in singles)
    rate = sum(s.of_class(q) for s in singles) + errors
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0):
        raise NoSignalError("sifted rate is zero (no signal): QBER undefined")
    return rate, errors / rate


def proto_yields(sol: DetectionSolution, link: LinkParams, det: DetectorParams, n: int) -> ClickProbs:
    """Proto-yields z_{m,n}: click probabilities given exactly ``n`` photons."""
    if n < 0:
        raise DomainError("photon number must be >= 0")
    gamma = link.reduced_efficiency(det.efficiency)
    return _clicks(sol.dead_time_factor, sol.noise_prob, (1.0 - gamma) ** n, (1.0 - gamma / 2.0) ** n)


def single_proto_yields(z: ClickProbs, p_other: ClickProbs) -> SingleProbs:
    """Proto-yields with double counts removed, using the other detector's signal clicks."""
    return single_event_probs(z, p_other)


def photon_number_stats(singles, mu1, kind: ProtocolKind, n: int):
    """n-photon yield Y_n, rate r_n and error e_n.

    ``singles`` is the pair ``(Z^(0), Z^(1))`` for photon number ``n``.
    """
    q = kind.q
    err = sum(s.p2 for s in singles)
    yld = np.asarray(sum(s.of_class(q) for s in singles) + err, dtype=float)
    if np.any(yld <= 0):
        raise NoSignalError(f"yield Y_{n} is zero: e_{n} undefined")
    mu1 = np.asarray(mu1, dtype=float)
    poisson = np.exp(-mu1) * mu1**n / math.factorial(n)
    return yld, yld * poisson, err / yld


def binary_entropy(u):
    """H2(u) = -u log2 u - (1 - u) log2 (1 - u), with H2(0) = H2(1) = 0."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise DomainError("binary entropy argument must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -u * np.log2(u) - (1.0 - u) * np.log2(1.0 - u)
    h = np.where((u == 0) | (u == 1), 0.0, h)
    return h[()] if h.ndim == 0 else h


def secret_key_rate(r1, e1, sifted_rate, qber, signal_probability, n_gates, frame_period, ec_factor=1.1):
    """Asymptotic secret key rate in bits per second.

    S = eps_1 N / (2 t_fr) [r_1 (1 - H2(e_1)) - f(E) R H2(E)]

    ``ec_factor`` is either a constant f or a callable f(E).

    Returns
    -------
    raw, clamped
        The raw value (may be negative) and max(raw, 0).
    """
    f = ec_factor(qber) if callable(ec_factor) else ec_factor
    if np.any(np.asarray(f) < 1):
        raise DomainError("error-correction factor must be >= 1")
    prefactor = signal_probability * np.asarray(n_gates, dtype=float) / (2.0 * frame_period)
    raw = prefactor * (r1 * (1.0 - binary_entropy(e1)) - f * sifted_rate * binary_entropy(qber))
    return raw, np.maximum(raw, 0.0)


def poisson_tail_bound(mu: float, n_max: int) -> float:
    """Leading tail term exp(-mu) mu^(n_max+1) / (n_max+1)! of a truncated Poisson series."""
    return math.exp(-mu) * mu ** (n_max + 1) / math.factorial(n_max + 1)


@dataclass(frozen=True)
class RateReport:
    """Every intermediate and final quantity of the rate model for one scenario."""

    length: object
    mu1: object
    dead_time: object
    solutions: tuple
    clicks: tuple
    singles: tuple
    sifted_rate: object
    qber: object
    yields: tuple
    photon_rates: tuple
    photon_errors: tuple
    key_rate_raw: object
    key_rate: object
    ec_factor: object
    gate_count: object
    asymmetric_gate_count: bool

    @property
    def corrected_total(self):
        return tuple(s.corrected_total for s in self.solutions)

    @property
    def afterpulse_prob(self):
        return tuple(s.afterpulse_prob for s in self.solutions)


def compute_rates(scenario: Scenario, n_max: int = 3, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> RateReport:
    """Run the full model chain for ``scenario``.

    Yields, rates and errors are reported for n = 0..n_max; an undefined e_n
    (zero yield) is stored as NaN except for n = 1, which the key rate needs.
    """
    source = scenario.resolved_source()
    link, timing, kind = scenario.link, scenario.timing, scenario.protocol
    dets = scenario.detectors
    sols = tuple(solve_detection(source, scenario.phases, link, d, timing, tol=tol, max_iter=max_iter) for d in dets)
    clicks = tuple(signal_click_probs(s, link, source, d) for s, d in zip(sols, dets))
    singles = (single_event_probs(clicks[0], clicks[1]), single_event_probs(clicks[1], clicks[0]))
    rate, qber = sifted_and_qber(singles, kind)

    yields, rates, errors = [], [], []
    for n in range(max(n_max, 1) + 1):
        z = [proto_yields(s, link, d, n) for s, d in zip(sols, dets)]
        zs = (single_proto_yields(z[0], clicks[1]), single_proto_yields(z[1], clicks[0]))
        try:
            y, r, e = photon_number_stats(zs, source.signal, kind, n)
        except NoSignalError:
            if n == 1:
                raise
            y = sum(x.of_class(kind.q) + x.p2 for x in zs)
            r, e = y * 0.0, np.full(np.shape(y), np.nan)
        yields.append(y)
        rates.append(r)
        errors.append(e)

    n_gates = np.minimum(sols[0].gate_count, sols[1].gate_count)
    asym = bool(np.any(sols[0].gate_count != sols[1].gate_count))
    raw, clamped = secret_key_rate(
        rates[1], errors[1], rate, qber, source.signal_probability, n_gates, timing.frame_period, scenario.ec_factor
    )
    return RateReport(
        length=link.length,
        mu1=source.signal,
        dead_time=dets[0].dead_time,
        solutions=sols,
        clicks=clicks,
        singles=singles,
        sifted_rate=rate,
        qber=qber,
        yields=tuple(yields),
        photon_rates=tuple(rates),
        photon_errors=tuple(errors),
        key_rate_raw=raw,
        key_rate=clamped,
        ec_factor=scenario.ec_factor,
        gate_count=n_gates,
        asymmetric_gate_count=asym,
    )
