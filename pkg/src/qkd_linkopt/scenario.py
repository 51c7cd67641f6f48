"""A complete link configuration: protocol, detectors, timing, channel, source."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvariantError
from .params import LinkParams, PhaseEnsemble, SourceEnsemble, TimingParams

__all__ = ["ProtocolKind", "Scenario", "MU1_RULES", "signal_intensity"]


@dataclass(frozen=True)
class ProtocolKind:
    """Protocol family and decoy flag.

    ``q`` selects which outcome class carries the key: 1 for BB84 (the
    deterministic outcome), 3 for SARG04 (the balanced outcome).
    """

    family: str = "BB84"
    decoy: bool = False

    def __post_init__(self):
        family = self.family.upper()
        if family not in ("BB84", "SARG04"):
            raise InvariantError(f"unknown protocol family {self.family!r}")
        object.__setattr__(self, "family", family)

    @property
    def q(self) -> int:
        return 1 if self.family == "BB84" else 3

    @classmethod
    def parse(cls, text: str) -> ProtocolKind:
        """Parse names like ``bb84``, ``decoy-bb84``, ``sarg04``, ``decoy-sarg04``."""
        t = text.strip().lower().replace("_", "-")
        decoy = t.startswith("decoy")
        family = t.removeprefix("decoy").strip("- ")
        return cls(family=family, decoy=decoy)

    def __str__(self):
        return ("decoy-" if self.decoy else "") + self.family.lower()


def _tc(tc):
    return np.asarray(tc, dtype=float)


# Rules fixing the signal intensity from the channel transmittance for the
# standard (non-decoy) protocols. SARG04 comes in two variants; both are
# capped at mu1 = 1.
MU1_RULES = {
    "fixed": None,
    "tc": lambda tc: _tc(tc),
    "2sqrt-tc": lambda tc: np.minimum(2.0 * np.sqrt(_tc(tc)), 1.0),
    "sqrt2-sqrt-tc": lambda tc: np.minimum(np.sqrt(2.0) * np.sqrt(_tc(tc)), 1.0),
}


def signal_intensity(rule: str, transmittance, fixed):
    """Signal mean photon number under ``rule`` (``fixed`` returns ``fixed``)."""
    try:
        fn = MU1_RULES[rule]
    except KeyError:
        raise InvariantError(f"unknown mu1 rule {rule!r}; expected one of {sorted(MU1_RULES)}") from None
    return fixed if fn is None else fn(transmittance)


def _default_detectors():
    from .presets import ID201

    return (ID201.replace(label=0), ID201.replace(label=1))


@dataclass(frozen=True)
class Scenario:
    """Everything needed to evaluate the key rate of one link configuration.

    ``mu1_rule`` decides the signal intensity: ``fixed`` uses the source as
    given, the others derive it from the channel transmittance (see
    :data:`MU1_RULES`).
    """

    protocol: ProtocolKind = field(default_factory=ProtocolKind)
    detectors: tuple = field(default_factory=_default_detectors)
    timing: TimingParams = field(default_factory=lambda: TimingParams(5e6, 500e-6, 1e-3))
    link: LinkParams = field(default_factory=LinkParams)
    source: SourceEnsemble = field(default_factory=lambda: SourceEnsemble.single(0.1))
    phases: PhaseEnsemble = field(default_factory=PhaseEnsemble)
    ec_factor: object = 1.1
    mu1_rule: str = "fixed"

    def __post_init__(self):
        dets = tuple(self.detectors)
        if len(dets) != 2:
            raise InvariantError("a scenario needs exactly two detectors")
        dets = tuple(d if d.label == w else d.replace(label=w) for w, d in enumerate(dets))
        object.__setattr__(self, "detectors", dets)
        signal_intensity(self.mu1_rule, 1.0, 0.0)
        if not callable(self.ec_factor) and not self.ec_factor >= 1:
            raise InvariantError("error-correction factor must be >= 1")

    @property
    def mu1(self):
        """Signal intensity after applying ``mu1_rule``."""
        return signal_intensity(self.mu1_rule, self.link.channel_transmittance, self.source.signal)

    def resolved_source(self) -> SourceEnsemble:
        if self.mu1_rule == "fixed":
            return self.source
        return self.source.with_signal(self.mu1)

    def with_dead_time(self, dead_time) -> Scenario:
        return replace(self, detectors=tuple(d.replace(dead_time=dead_time) for d in self.detectors))

    def with_length(self, length) -> Scenario:
        return replace(self, link=self.link.replace(length=length))

    def with_signal(self, mu1) -> Scenario:
        """Fix the signal intensity to ``mu1`` (switches the rule to ``fixed``)."""
        return replace(self, source=self.source.with_signal(mu1), mu1_rule="fixed")

    def replace(self, **changes) -> Scenario:
        return replace(self, **changes)
