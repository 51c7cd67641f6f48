import math
from pathlib import Path

import pytest

from qkd_linkopt.config import load_config, parse_config, parse_lengths, parse_quantity
from qkd_linkopt.errors import ParseError
from qkd_linkopt.presets import ID201

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """\
[protocol]
kind = bb84
[detector]
preset = id201
[timing]
frequency = 5 MHz
frame_duration = 500 us
frame_period = 1 ms
[link]
lengths = 0, 10
"""


@pytest.mark.parametrize(
    "text, kind, value",
    [
        ("15.35 ns", "time", 15.35e-9),
        ("71.5 us", "time", 71.5e-6),
        ("71.5 µs", "time", 71.5e-6),
        ("2 ms", "time", 2e-3),
        ("5 MHz", "frequency", 5e6),
        ("500 khz", "frequency", 5e5),
        ("1.2 GHz", "frequency", 1.2e9),
        ("0.2 dB/km", "attenuation", 0.2),
        ("90 deg", "angle", math.pi / 2),
        ("0.5", None, 0.5),
        ("-1e-3", None, -1e-3),
    ],
)
def test_quantities(text, kind, value):
    assert parse_quantity(text, kind) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text, kind", [("10", "time"), ("10 furlongs", "time"), ("5 MS", "time"), ("1 ns", None), ("x", None)])
def test_bad_quantities(text, kind):
    with pytest.raises(ValueError):
        parse_quantity(text, kind)


def test_lengths():
    assert parse_lengths("0:20:10") == (0.0, 10.0, 20.0)
    assert parse_lengths("0:25:10") == (0.0, 10.0, 20.0)
    assert parse_lengths("5, 7.5 km") == (5.0, 7.5)
    assert parse_lengths("") == ()
    assert parse_lengths("30:10:5") == ()
    for bad in ("0:10", "0:10:0", "-5", "nan"):
        with pytest.raises(ValueError):
            parse_lengths(bad)


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.lengths == (0.0, 10.0)
    sc = cfg.scenario_at(10.0)
    assert float(sc.link.length) == 10.0
    assert sc.detectors[0] == ID201 and sc.detectors[1] == ID201.replace(label=1)
    assert sc.mu1_rule == "tc" and float(sc.mu1) == pytest.approx(10 ** -0.2)
    assert cfg.optimizer.mode == "dead-time-only"


def test_per_detector_override():
    cfg = parse_config(MINIMAL + "[detector.1]\ndark_count_prob = 1e-6\n")
    sc = cfg.scenario_at(0.0)
    assert sc.detectors[1].dark_count_prob == 1e-6
    assert sc.detectors[0].dark_count_prob == ID201.dark_count_prob


def test_explicit_detector_without_preset():
    text = MINIMAL.replace(
        "preset = id201",
        "efficiency = 0.1\ndark_count_prob = 1e-5\nafterpulse_amplitude = 10 ns\nafterpulse_decay = 50 us\ndead_time = 5 us",
    )
    det = parse_config(text).scenario_at(0.0).detectors[0]
    assert det.afterpulse_amplitude == pytest.approx(10e-9) and det.dead_time == pytest.approx(5e-6)


@pytest.mark.parametrize("name", ["bb84.ini", "decoy_bb84_50mhz.ini", "sarg04.ini", "calibration.ini"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.source_path == CONFIGS / name


def test_decoy_shipped_config():
    cfg = load_config(CONFIGS / "decoy_bb84_50mhz.ini")
    assert cfg.optimizer.mode == "joint"
    assert cfg.scenario_at(0.0).protocol.decoy
    assert len(cfg.lengths) == 31


def _line_of(text, needle):
    return next(n for n, line in enumerate(text.splitlines(), start=1) if needle in line)


@pytest.mark.parametrize(
    "edit, needle",
    [
        (("frequency = 5 MHz", "frequency = 5"), "frequency = 5"),
        (("frequency = 5 MHz", "frequency = 5 parsecs"), "frequency = 5 parsecs"),
        (("lengths = 0, 10", "lengths = 0, -10"), "lengths ="),
        (("kind = bb84", "kind = e91"), "kind ="),
        (("preset = id201", "preset = id210"), "preset ="),
        (("preset = id201", "preset = id201\ncolour = red"), "colour"),
        (("[link]", "[lnk]"), "[lnk]"),
    ],
)
def test_errors_report_line(edit, needle):
    text = MINIMAL.replace(*edit)
    with pytest.raises(ParseError) as info:
        parse_config(text, origin="x.ini")
    assert info.value.line == _line_of(text, needle)
    assert str(info.value).startswith(f"x.ini:{info.value.line}")


@pytest.mark.parametrize(
    "extra",
    [
        "[protocol]\nec_factor = 0.9\n",
        "[source]\nmu1_rule = fixed\n",
        "[source]\nmu1_rule = nope\n",
        "[optimizer]\nmode = sideways\n",
        "[optimizer]\nmu_min = 0.1\n",
        "[optimizer]\nmode = fixed-mu1m\n",
        "[montecarlo]\nframes = 0\n",
        "[montecarlo]\nseed = 1.5\n",
    ],
)
def test_semantic_errors(extra):
    base = MINIMAL.replace("[protocol]\nkind = bb84\n", "")
    if not extra.startswith("[protocol]"):
        extra = "[protocol]\nkind = bb84\n" + extra
    with pytest.raises(ParseError):
        parse_config(extra + base)


def test_syntax_error_line():
    with pytest.raises(ParseError) as info:
        parse_config("[protocol]\nkind = bb84\nthis is not a pair\n")
    assert info.value.line == 3


def test_missing_file():
    with pytest.raises(ParseError):
        load_config("/nonexistent/x.ini")
