"""Parameter containers for a gated-detector prepare-and-measure QKD link.

Units are SI throughout: times in seconds, frequencies in Hz. Fibre length
is the one exception and is kept in km because attenuation is quoted in
dB/km.

Fields that are commonly swept (dead time, efficiency, frequency, length,
mean photon numbers) may hold numpy arrays. Every model function broadcasts
over them, so a whole sweep can be evaluated in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvariantError

__all__ = [
    "DetectorParams",
    "TimingParams",
    "LinkParams",
    "SourceEnsemble",
    "PhaseEnsemble",
    "gate_count",
    "active_gate_count",
]

# Absorbs representation error in (t_S - dt) * F so that exact gate
# boundaries such as dt = t_S - n / F floor to n and not n - 1.
_GATE_SLACK = 1e-7


def _check(condition, message):
    if not np.all(condition):
        raise InvariantError(message)


@dataclass(frozen=True)
class DetectorParams:
    """Internal parameters of one gated single-photon detector.

    Parameters
    ----------
    efficiency : float or ndarray
        Photodetection efficiency, in [0, 1].
    dark_count_prob : float or ndarray
        Dark count probability per gate, in [0, 1).
    afterpulse_amplitude : float or ndarray
        Afterpulsing amplitude Q in seconds.
    afterpulse_decay : float or ndarray
        Effective trap decay time tau in seconds.
    dead_time : float or ndarray
        Hold-off time applied after every click, in seconds.
    label : int
        Detector index (0 or 1) at the interferometer output.
    """

    efficiency: float
    dark_count_prob: float
    afterpulse_amplitude: float
    afterpulse_decay: float
    dead_time: float
    label: int = 0

    def __post_init__(self):
        eta = np.asarray(self.efficiency, dtype=float)
        _check((eta >= 0) & (eta <= 1), f"efficiency must lie in [0, 1], got {self.efficiency}")
        pdc = np.asarray(self.dark_count_prob, dtype=float)
        _check((pdc >= 0) & (pdc < 1), f"dark_count_prob must lie in [0, 1), got {self.dark_count_prob}")
        _check(np.asarray(self.afterpulse_amplitude) >= 0, "afterpulse_amplitude must be >= 0")
        tau = np.asarray(self.afterpulse_decay, dtype=float)
        _check(np.isfinite(tau) & (tau > 0), "afterpulse_decay must be finite and > 0")
        _check(np.asarray(self.dead_time) >= 0, "dead_time must be >= 0")
        if self.label not in (0, 1):
            raise InvariantError(f"label must be 0 or 1, got {self.label}")

    @property
    def decay_rate(self):
        """Trap decay rate k = 1 / tau, in 1/s."""
        return 1.0 / np.asarray(self.afterpulse_decay, dtype=float)

    def replace(self, **changes) -> DetectorParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class TimingParams:
    """Gate and frame timing of the receiver.

    Parameters
    ----------
    frequency : float or ndarray
        Gate (operating) frequency F in Hz.
    frame_duration : float
        Length t_S of the block of gates in one frame, in seconds.
    frame_period : float
        Repetition period t_fr of the frames, in seconds.
    """

    frequency: float
    frame_duration: float
    frame_period: float

    def __post_init__(self):
        _check(np.asarray(self.frequency) > 0, "frequency must be > 0")
        _check(np.asarray(self.frame_duration) > 0, "frame_duration must be > 0")
        _check(
            np.asarray(self.frame_period) >= np.asarray(self.frame_duration),
            "frame_period must be >= frame_duration",
        )

    @property
    def gate_period(self):
        """t_F = 1 / F."""
        return 1.0 / np.asarray(self.frequency, dtype=float)

    def replace(self, **changes) -> TimingParams:
        return replace(self, **changes)


def gate_count(timing: TimingParams, dead_time):
    """Maximum number of gates exposed to afterpulsing, floor((t_S - dt) F).

    Returned as a float array so it broadcasts with the other inputs.
    """
    raw = (np.asarray(timing.frame_duration, dtype=float) - np.asarray(dead_time, dtype=float)) * np.asarray(
        timing.frequency, dtype=float
    )
    return np.floor(raw + _GATE_SLACK)


def active_gate_count(n_gates):
    """Average number of gates per frame, (N + 1) / 2."""
    return (np.asarray(n_gates, dtype=float) + 1.0) / 2.0


@dataclass(frozen=True)
class LinkParams:
    """Fibre channel and receiver optics.

    Parameters
    ----------
    attenuation : float
        Fibre loss alpha in dB/km.
    length : float or ndarray
        Fibre length in km.
    receiver_transmittance : float
        Transmittance T_B of Bob's module, in (0, 1].
    """

    attenuation: float = 0.2
    length: float = 0.0
    receiver_transmittance: float = 0.5

    def __post_init__(self):
        _check(np.asarray(self.attenuation) >= 0, "attenuation must be >= 0")
        _check(np.asarray(self.length) >= 0, "length must be >= 0")
        tb = np.asarray(self.receiver_transmittance, dtype=float)
        _check((tb > 0) & (tb <= 1), "receiver_transmittance must lie in (0, 1]")

    @property
    def channel_transmittance(self):
        """T_c = 10^(-alpha L / 10)."""
        return 10.0 ** (-np.asarray(self.attenuation, dtype=float) * np.asarray(self.length, dtype=float) / 10.0)

    def reduced_efficiency(self, efficiency):
        """Gamma = eta T_c T_B, the efficiency seen on a fully constructive output."""
        return np.asarray(efficiency, dtype=float) * self.channel_transmittance * self.receiver_transmittance

    def replace(self, **changes) -> LinkParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class SourceEnsemble:
    """Weak coherent source emitting one of K intensities per time-bin.

    The first entry is the signal state; the rest are decoys.
    """

    mean_photon_numbers: tuple
    probabilities: tuple

    def __post_init__(self):
        mus = tuple(self.mean_photon_numbers)
        eps = tuple(float(e) for e in self.probabilities)
        object.__setattr__(self, "mean_photon_numbers", mus)
        object.__setattr__(self, "probabilities", eps)
        if len(mus) == 0 or len(mus) != len(eps):
            raise InvariantError("need one probability per mean photon number")
        if abs(math.fsum(eps) - 1.0) > 1e-12:
            raise InvariantError(f"state probabilities must sum to 1, got {math.fsum(eps)!r}")
        if any(e < 0 for e in eps):
            raise InvariantError("state probabilities must be >= 0")
        for mu in mus:
            _check(np.asarray(mu) >= 0, "mean photon numbers must be >= 0")
        if len(mus) > 1:
            decoys = sum(np.asarray(m, dtype=float) for m in mus[1:])
            _check(np.asarray(mus[0]) > decoys, "signal intensity must exceed the sum of decoy intensities")
            for a, b in zip(mus[1:], mus[2:]):
                _check(np.asarray(a) > np.asarray(b), "decoy intensities must be strictly decreasing")
            if not eps[0] > math.fsum(eps[1:]):
                raise InvariantError("signal probability must exceed the total decoy probability")

    @classmethod
    def single(cls, mu) -> SourceEnsemble:
        """Standard (non-decoy) source with one intensity."""
        return cls((mu,), (1.0,))

    @property
    def signal(self):
        return self.mean_photon_numbers[0]

    @property
    def signal_probability(self) -> float:
        return self.probabilities[0]

    def with_signal(self, mu) -> SourceEnsemble:
        return SourceEnsemble((mu,) + self.mean_photon_numbers[1:], self.probabilities)


_ALICE_PHASES = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
_BOB_PHASES = (0.0, math.pi / 2)


@dataclass(frozen=True)
class PhaseEnsemble:
    """Phase encoding at Alice and phase choice at Bob's interferometer.

    ``offset`` shifts every phase difference (misalignment); it defaults to 0.
    """

    alice_phases: tuple = _ALICE_PHASES
    alice_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    bob_phases: tuple = _BOB_PHASES
    bob_probs: tuple = (0.5, 0.5)
    offset: float = 0.0

    def __post_init__(self):
        for name, phases, allowed in (
            ("alice", self.alice_phases, _ALICE_PHASES),
            ("bob", self.bob_phases, _BOB_PHASES),
        ):
            for phi in phases:
                if not any(math.isclose(phi, a, abs_tol=1e-12) for a in allowed):
                    raise InvariantError(f"{name} phase {phi!r} not in {allowed}")
        for name, phases, probs in (
            ("alice", self.alice_phases, self.alice_probs),
            ("bob", self.bob_phases, self.bob_probs),
        ):
            if len(phases) != len(probs):
                raise InvariantError(f"{name}: need one probability per phase")
            if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
                raise InvariantError(f"{name} phase probabilities must be >= 0 and sum to 1")

    def weights(self) -> np.ndarray:
        """Joint probabilities theta_i^A theta_j^B, shape (n_alice, n_bob)."""
        return np.outer(self.alice_probs, self.bob_probs)

    def phase_arguments(self, label: int) -> np.ndarray:
        """h_ijw = (phi_i^A - phi_j^B) / 2 + offset - w pi / 2, shape (n_alice, n_bob)."""
        diff = (np.subtract.outer(self.alice_phases, self.bob_phases)) / 2.0 + self.offset
        return diff - label * math.pi / 2

    def interference(self, label: int) -> np.ndarray:
        """cos^2(h_ijw): fraction of the light reaching detector ``label``."""
        return np.cos(self.phase_arguments(label)) ** 2

    def nominal_classes(self, label: int) -> np.ndarray:
        """Outcome class of every (i, j) for a detector, ignoring the offset.

        1: constructive (h = 0), 2: destructive (h = pi/2), 3: balanced (h = +-pi/4, 3pi/4).
        """
        c2 = np.cos(np.subtract.outer(self.alice_phases, self.bob_phases) / 2.0 - label * math.pi / 2) ** 2
        classes = np.full(c2.shape, 3, dtype=np.int64)
        classes[np.isclose(c2, 1.0)] = 1
        classes[np.isclose(c2, 0.0, atol=1e-12)] = 2
        return classes
