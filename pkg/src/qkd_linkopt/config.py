"""Scenario configuration files.

An INI-style file whose sections mirror the model types::

    [protocol]      kind = bb84 | sarg04 | decoy-bb84 | decoy-sarg04, ec_factor
    [detector]      preset, efficiency, dark_count_prob, afterpulse_amplitude,
                    afterpulse_decay, dead_time  (shared by both detectors)
    [detector.0]    per-detector overrides of any [detector] key
    [detector.1]
    [timing]        frequency, frame_duration, frame_period
    [link]          attenuation, receiver_transmittance, lengths
    [source]        mu, probabilities, mu1_rule
    [phases]        alice_phases, alice_probs, bob_phases, bob_probs, offset
    [optimizer]     mode, dead_time_min, dead_time_max, mu_min, mu_max, mu1_min
    [montecarlo]    frames, seed
    [calibration]   data, frame_duration, frame_period

Times, frequencies, attenuations and angles need an explicit unit suffix
(``ns us ms s``, ``Hz kHz MHz GHz``, ``dB/km``, ``deg rad``). Lengths are in
km; ``lengths = 0:120:10`` is an inclusive range and ``lengths = 5, 20`` a
list. Every error names the file, line and key.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path


from .errors import InvariantError, ParseError
from .optimize import MODES, OptimizationProblem
from .params import DetectorParams, LinkParams, PhaseEnsemble, SourceEnsemble, TimingParams
from .presets import ID201
from .scenario import MU1_RULES, ProtocolKind, Scenario

__all__ = [
    "ScenarioConfig",
    "OptimizerSettings",
    "MonteCarloSettings",
    "CalibrationSettings",
    "load_config",
    "parse_config",
    "parse_quantity",
    "parse_lengths",
]

_UNITS = {
    "time": {"ns": 1e-9, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ms": 1e-3, "s": 1.0},
    "frequency": {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "attenuation": {"db/km": 1.0},
    "angle": {"deg": math.pi / 180.0, "rad": 1.0},
}

_PRESETS = {"id201": ID201}

_DETECTOR_KEYS = {
    "efficiency": None,
    "dark_count_prob": None,
    "afterpulse_amplitude": "time",
    "afterpulse_decay": "time",
    "dead_time": "time",
}

_KEYS = {
    "protocol": {"kind", "ec_factor"},
    "detector": {"preset", *_DETECTOR_KEYS},
    "detector.0": set(_DETECTOR_KEYS),
    "detector.1": set(_DETECTOR_KEYS),
    "timing": {"frequency", "frame_duration", "frame_period"},
    "link": {"attenuation", "receiver_transmittance", "lengths"},
    "source": {"mu", "probabilities", "mu1_rule"},
    "phases": {"alice_phases", "alice_probs", "bob_phases", "bob_probs", "offset"},
    "optimizer": {"mode", "dead_time_min", "dead_time_max", "mu_min", "mu_max", "mu1_min"},
    "montecarlo": {"frames", "seed"},
    "calibration": {"data", "frame_duration", "frame_period"},
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(text: str, kind: str | None = None) -> float:
    """Parse ``"<number> <unit>"`` into SI units.

    ``kind`` is one of ``time``, ``frequency``, ``attenuation``, ``angle``,
    or None for a bare dimensionless number. A unit is mandatory when
    ``kind`` is given.

    >>> parse_quantity("15.35 ns", "time")
    1.535e-08
    """
    m = _NUMBER.match(text)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if kind is None:
        if unit:
            raise ValueError(f"unexpected unit {unit!r}")
        return value
    units = _UNITS[kind]
    key = unit if kind == "time" else unit.lower()
    if not unit:
        raise ValueError(f"missing unit; expected one of {', '.join(units)}")
    if key not in units:
        raise ValueError(f"unknown {kind} unit {unit!r}; expected one of {', '.join(units)}")
    return value * units[key]


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_lengths(text: str) -> tuple:
    """``start:stop:step`` (inclusive), a comma list, or empty; values in km."""
    text = text.strip()
    if text.lower().endswith("km"):
        text = text[:-2].strip()
    if not text:
        return ()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if not step > 0:
            raise ValueError("range step must be > 0")
        if stop < start:
            return ()
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = tuple(float(start + k * step) for k in range(count))
    else:
        values = tuple(float(v) for v in _split_list(text))
    if any(not math.isfinite(v) or v < 0 for v in values):
        raise ValueError("lengths must be finite and >= 0")
    return values


@dataclass(frozen=True)
class OptimizerSettings:
    mode: str = "dead-time-only"
    dead_time_bounds: tuple = None
    mu_bounds: tuple = None
    mu1_min: float = None


@dataclass(frozen=True)
class MonteCarloSettings:
    frames: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class CalibrationSettings:
    """``data`` is resolved relative to the configuration file."""

    data: Path = None
    frame_duration: float = 1.0
    frame_period: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    """A parsed configuration file.

    ``scenario`` carries every setting except the link length; use
    :meth:`scenario_at` for one distance.
    """

    scenario: Scenario
    lengths: tuple
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    source_path: Path = None

    def scenario_at(self, length: float) -> Scenario:
        return self.scenario.with_length(length)

    def problem(self) -> OptimizationProblem:
        o = self.optimizer
        return OptimizationProblem(
            self.scenario, dead_time_bounds=o.dead_time_bounds, mu_bounds=o.mu_bounds, mode=o.mode, mu1_min=o.mu1_min
        )


class _Reader:
    """configparser wrapper that remembers the line of every key."""

    def __init__(self, text: str, source):
        self.source = source
        self.cp = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"), strict=True
        )
        self.cp.optionxform = str.lower
        try:
            self.cp.read_string(text, source=str(source))
        except configparser.MissingSectionHeaderError as exc:
            raise ParseError("content before the first [section]", source=source, line=exc.lineno) from None
        except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
            raise ParseError(exc.message.split(":", 1)[-1].strip(), source=source, line=exc.lineno) from None
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else None
            raise ParseError("malformed line", source=source, line=line) from None
        self.lines = {}
        section = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            s = raw.strip()
            if s.startswith("[") and "]" in s:
                section = s[1 : s.index("]")].strip()
                self.lines[(section, None)] = lineno
            elif section and s and s[0] not in "#;" and re.match(r"^[^=:]+[=:]", s):
                key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                self.lines[(section, key)] = lineno
        for section in self.cp.sections():
            if section not in _KEYS:
                raise self.error(f"unknown section [{section}]", section)
            for key in self.cp[section]:
                if key not in _KEYS[section]:
                    raise self.error(f"unknown key {key!r}", section, key)

    def error(self, message, section, key=None):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        where = f"{section}.{key}" if key else section
        return ParseError(message, source=self.source, line=line, field=where)

    def has(self, section, key=None):
        if key is None:
            return self.cp.has_section(section)
        return self.cp.has_option(section, key)

    def raw(self, section, key, default=None):
        if self.has(section, key):
            return self.cp[section][key]
        return default

    def get(self, section, key, convert, default=None, required=False):
        if not self.has(section, key):
            if required:
                raise self.error(f"missing required key {key!r}", section, key)
            return default
        text = self.cp[section][key]
        try:
            return convert(text)
        except (ValueError, InvariantError) as exc:
            raise self.error(str(exc), section, key) from None


def _number(kind=None):
    return lambda text: parse_quantity(text, kind)


def _number_list(kind=None):
    return lambda text: tuple(parse_quantity(t, kind) for t in _split_list(text))


def _angle_list(text):
    # One unit for the whole list: "0, 90, 180, 270 deg".
    m = re.match(r"^(.*?)(deg|rad)\s*$", text.strip(), flags=re.IGNORECASE)
    if not m:
        raise ValueError("angle list needs a trailing unit (deg or rad)")
    scale = _UNITS["angle"][m.group(2).lower()]
    return tuple(parse_quantity(t) * scale for t in _split_list(m.group(1)))


def _integer(text):
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f"not an integer: {text!r}") from None


def _detectors(r: _Reader):
    base = {}
    preset = r.get("detector", "preset", lambda t: t.strip().lower())
    if preset is not None:
        if preset not in _PRESETS:
            raise r.error(f"unknown preset {preset!r}; expected one of {sorted(_PRESETS)}", "detector", "preset")
        p = _PRESETS[preset]
        base = {k: getattr(p, k) for k in _DETECTOR_KEYS}
    for key, kind in _DETECTOR_KEYS.items():
        v = r.get("detector", key, _number(kind))
        if v is not None:
            base[key] = v
    dets = []
    for w in (0, 1):
        sec = f"detector.{w}"
        values = dict(base)
        for key, kind in _DETECTOR_KEYS.items():
            v = r.get(sec, key, _number(kind))
            if v is not None:
                values[key] = v
        missing = [k for k in _DETECTOR_KEYS if k not in values]
        if missing:
            in_sec = sec if r.has(sec) else "detector"
            raise r.error(f"missing detector keys: {', '.join(missing)} (or set preset = id201)", in_sec)
        try:
            dets.append(DetectorParams(**values, label=w))
        except InvariantError as exc:
            raise r.error(str(exc), sec if r.has(sec) else "detector") from None
    return tuple(dets)


def parse_config(text: str, origin="<config>") -> ScenarioConfig:
    """Parse configuration ``text``; ``origin`` names it in error messages."""
    r = _Reader(text, origin)

    kind = r.get("protocol", "kind", ProtocolKind.parse, required=True)
    ec = r.get("protocol", "ec_factor", _number(), 1.1)
    if not ec >= 1:
        raise r.error("error-correction factor must be >= 1", "protocol", "ec_factor")

    detectors = _detectors(r)

    try:
        timing = TimingParams(
            frequency=r.get("timing", "frequency", _number("frequency"), required=True),
            frame_duration=r.get("timing", "frame_duration", _number("time"), 500e-6),
            frame_period=r.get("timing", "frame_period", _number("time"), 1e-3),
        )
    except InvariantError as exc:
        raise r.error(str(exc), "timing") from None

    lengths = r.get("link", "lengths", parse_lengths, required=True)
    try:
        link = LinkParams(
            attenuation=r.get("link", "attenuation", _number("attenuation"), 0.2),
            length=0.0,
            receiver_transmittance=r.get("link", "receiver_transmittance", _number(), 0.5),
        )
    except InvariantError as exc:
        raise r.error(str(exc), "link") from None

    default_rule = "fixed" if kind.decoy else ("tc" if kind.family == "BB84" else "2sqrt-tc")
    rule = r.get("source", "mu1_rule", lambda t: t.strip().lower(), default_rule)
    if rule not in MU1_RULES:
        raise r.error(f"unknown mu1_rule {rule!r}; expected one of {sorted(MU1_RULES)}", "source", "mu1_rule")
    if rule == "fixed" and not r.has("source", "mu"):
        raise r.error("mu is required when mu1_rule = fixed", "source", "mu")
    mus = r.get("source", "mu", _number_list(), (1.0,))
    probs = r.get("source", "probabilities", _number_list(), None)
    if probs is None:
        if len(mus) != 1:
            raise r.error("probabilities are required with more than one intensity", "source", "probabilities")
        probs = (1.0,)
    try:
        source = SourceEnsemble(mus, probs)
    except InvariantError as exc:
        raise r.error(str(exc), "source") from None
    if kind.decoy and len(mus) < 2:
        raise r.error("a decoy protocol needs at least two intensities", "source", "mu")

    phase_kw = {}
    for key, conv in (
        ("alice_phases", _angle_list),
        ("bob_phases", _angle_list),
        ("alice_probs", _number_list()),
        ("bob_probs", _number_list()),
        ("offset", _number("angle")),
    ):
        v = r.get("phases", key, conv)
        if v is not None:
            phase_kw[key] = v
    try:
        phases = PhaseEnsemble(**phase_kw)
    except InvariantError as exc:
        raise r.error(str(exc), "phases") from None

    try:
        scenario = Scenario(
            protocol=kind,
            detectors=detectors,
            timing=timing,
            link=link,
            source=source,
            phases=phases,
            ec_factor=ec,
            mu1_rule=rule,
        )
    except InvariantError as exc:
        raise r.error(str(exc), "protocol") from None

    mode = r.get("optimizer", "mode", lambda t: t.strip().lower(), "dead-time-only")
    if mode not in MODES:
        raise r.error(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", "optimizer", "mode")
    dt_lo = r.get("optimizer", "dead_time_min", _number("time"))
    dt_hi = r.get("optimizer", "dead_time_max", _number("time"))
    mu_lo = r.get("optimizer", "mu_min", _number())
    mu_hi = r.get("optimizer", "mu_max", _number())
    if (mu_lo is None) != (mu_hi is None):
        raise r.error("give both mu_min and mu_max, or neither", "optimizer", "mu_min" if mu_lo is None else "mu_max")
    optimizer = OptimizerSettings(
        mode=mode,
        dead_time_bounds=_pair(dt_lo, dt_hi, (float(timing.gate_period), 0.5 * float(timing.frame_duration))),
        mu_bounds=None if mu_lo is None else (mu_lo, mu_hi),
        mu1_min=r.get("optimizer", "mu1_min", _number()),
    )
    try:
        OptimizationProblem(
            scenario, optimizer.dead_time_bounds, optimizer.mu_bounds, mode=optimizer.mode, mu1_min=optimizer.mu1_min
        )
    except InvariantError as exc:
        raise r.error(str(exc), "optimizer") from None

    frames = r.get("montecarlo", "frames", _integer, 10_000)
    if frames < 1:
        raise r.error("frames must be >= 1", "montecarlo", "frames")
    seed = r.get("montecarlo", "seed", _integer, 0)
    if seed < 0:
        raise r.error("seed must be >= 0", "montecarlo", "seed")

    from_file = not str(origin).startswith("<")
    base = Path(origin).parent if from_file else Path(".")
    data = r.get("calibration", "data", lambda t: base / t.strip())
    cal_ts = r.get("calibration", "frame_duration", _number("time"), 1.0)
    cal_tfr = r.get("calibration", "frame_period", _number("time"), cal_ts)
    if cal_tfr < cal_ts:
        raise r.error("frame_period must be >= frame_duration", "calibration", "frame_period")

    return ScenarioConfig(
        scenario=scenario,
        lengths=lengths,
        optimizer=optimizer,
        montecarlo=MonteCarloSettings(frames=frames, seed=seed),
        calibration=CalibrationSettings(data=data, frame_duration=cal_ts, frame_period=cal_tfr),
        source_path=Path(origin) if from_file else None,
    )


def _pair(lo, hi, defaults):
    if lo is None and hi is None:
        return None
    return (defaults[0] if lo is None else lo, defaults[1] if hi is None else hi)


def load_config(path) -> ScenarioConfig:
    """Read and parse the configuration file at ``path``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read configuration: {exc.strerror}", source=path) from None
    except UnicodeDecodeError:
        raise ParseError("configuration is not valid UTF-8", source=path) from None
    return parse_config(text, origin=path)
