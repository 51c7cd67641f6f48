"""Reference detector and the link configurations studied for it."""
from __future__ import annotations

from .params import DetectorParams, LinkParams, SourceEnsemble, TimingParams
from .scenario import ProtocolKind, Scenario

__all__ = [
    "ID201",
    "CALIBRATION_MU",
    "DECOY_SOURCE",
    "standard_bb84",
    "standard_sarg04",
    "decoy_bb84",
    "decoy_sarg04",
]

#: InGaAs APD (id201) parameters fitted from click-probability data, with
#: the 10 us dead time used as baseline for the BB84 runs.
ID201 = DetectorParams(
    efficiency=9.32e-2,
    dark_count_prob=2.028e-5,
    afterpulse_amplitude=15.35e-9,
    afterpulse_decay=71.5e-6,
    dead_time=10e-6,
)

#: Mean photon number at the APD during calibration.
CALIBRATION_MU = 1.16e-2

#: Three-state decoy source: signal 0.4, weak decoy 0.001, vacuum.
DECOY_SOURCE = SourceEnsemble((0.4, 0.001, 0.0), (0.93, 0.05, 0.02))


def _scenario(protocol, source, mu1_rule, frequency, dead_time, length, detector):
    det = detector.replace(dead_time=dead_time)
    return Scenario(
        protocol=protocol,
        detectors=(det, det.replace(label=1)),
        timing=TimingParams(frequency=frequency, frame_duration=500e-6, frame_period=1e-3),
        link=LinkParams(attenuation=0.2, length=length, receiver_transmittance=0.5),
        source=source,
        ec_factor=1.1,
        mu1_rule=mu1_rule,
    )


def standard_bb84(frequency=5e6, dead_time=10e-6, length=0.0, detector=ID201) -> Scenario:
    """BB84 with mu1 = T_c."""
    return _scenario(ProtocolKind("BB84"), SourceEnsemble.single(1.0), "tc", frequency, dead_time, length, detector)


def standard_sarg04(frequency=5e6, dead_time=20e-6, length=0.0, detector=ID201, mu1_rule="2sqrt-tc") -> Scenario:
    """SARG04 with mu1 = 2 sqrt(T_c) (capped at 1); pass ``sqrt2-sqrt-tc`` for the other variant."""
    return _scenario(ProtocolKind("SARG04"), SourceEnsemble.single(1.0), mu1_rule, frequency, dead_time, length, detector)


def decoy_bb84(frequency=5e6, dead_time=10e-6, length=0.0, detector=ID201, source=DECOY_SOURCE) -> Scenario:
    return _scenario(ProtocolKind("BB84", decoy=True), source, "fixed", frequency, dead_time, length, detector)


def decoy_sarg04(frequency=5e6, dead_time=20e-6, length=0.0, detector=ID201, source=DECOY_SOURCE) -> Scenario:
    return _scenario(ProtocolKind("SARG04", decoy=True), source, "fixed", frequency, dead_time, length, detector)
