"""Command-line front end: ``qkd-linkopt rates|optimize|simulate|calibrate``.

Every command reads one configuration file (see :mod:`qkd_linkopt.config`)
and writes CSV, one row per link length in input order. Numbers carry 12
significant digits.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
4 some sweep points failed (the file is still written; see ``status``).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .calibration import FIT_PARAMETERS, CalibrationDataset, fit_detector
from .config import ScenarioConfig, load_config
from .errors import ConvergenceError, DomainError, InvariantError, NoSignalError, NumericError, ParseError
from .montecarlo import SimConfig, relative_deviation, simulate
from .optimize import _safe_optimize
from .rates import compute_rates

__all__ = ["main", "JOBS_ENV", "RATES_COLUMNS", "OPTIMIZE_COLUMNS", "SIMULATE_COLUMNS"]

#: Environment variable holding the default worker count.
JOBS_ENV = "QKD_LINKOPT_JOBS"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4

RATES_COLUMNS = (
    "L_km", "mu1", "dead_time_s", "P_TC_0", "P_TC_1", "p_AP",
    "R_mu1", "E_mu1", "r_1", "e_1", "S_raw", "S_clamped", "status",
)
OPTIMIZE_COLUMNS = RATES_COLUMNS[:-1] + ("dead_time_opt_s", "mu1_opt", "S_opt", "evals", "status")
SIMULATE_COLUMNS = ("L_km", "R_sim", "R_sim_se", "E_sim", "E_sim_se", "R_model", "E_model", "status")

_FAILED = "failed"


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return format(v, ".12g")


def _failure(exc) -> str:
    if isinstance(exc, NoSignalError):
        return "no signal"
    return f"{_FAILED}: {type(exc).__name__}: {exc}"


def _rate_fields(scenario) -> dict:
    rep = compute_rates(scenario)
    return {
        "mu1": float(rep.mu1),
        "dead_time_s": float(rep.dead_time),
        "P_TC_0": float(rep.corrected_total[0]),
        "P_TC_1": float(rep.corrected_total[1]),
        "p_AP": float(np.mean([float(p) for p in rep.afterpulse_prob])),
        "R_mu1": float(rep.sifted_rate),
        "E_mu1": float(rep.qber),
        "r_1": float(rep.photon_rates[1]),
        "e_1": float(rep.photon_errors[1]),
        "S_raw": float(rep.key_rate_raw),
        "S_clamped": float(rep.key_rate),
    }


def _nan_row(columns, length, status):
    row = {c: math.nan for c in columns}
    row.update(L_km=length, status=status)
    if "evals" in row:
        row["evals"] = 0
    return row


def _rates_point(config: ScenarioConfig, index: int, length: float) -> dict:
    try:
        row = _rate_fields(config.scenario_at(length))
    except Exception as exc:  # reported in the status column
        return _nan_row(RATES_COLUMNS, length, _failure(exc))
    return {"L_km": length, **row, "status": "ok"}


def _optimize_point(config: ScenarioConfig, index: int, length: float) -> dict:
    problem = config.problem()
    res = _safe_optimize((problem, length))
    if res.status.startswith(_FAILED):
        return _nan_row(OPTIMIZE_COLUMNS, length, res.status)
    try:
        scenario = problem.at_length(length).scenario.with_dead_time(res.dead_time)
        row = _rate_fields(scenario.with_signal(res.mu1))
    except Exception as exc:  # reported in the status column
        return _nan_row(OPTIMIZE_COLUMNS, length, _failure(exc))
    row.update(
        L_km=length,
        dead_time_opt_s=res.dead_time,
        mu1_opt=res.mu1,
        S_opt=res.key_rate,
        evals=res.evaluations,
        status=res.status,
    )
    return row


def _simulate_point(config: ScenarioConfig, index: int, length: float) -> dict:
    scenario = config.scenario_at(length)
    mc = config.montecarlo
    try:
        sim = simulate(
            SimConfig(scenario, frames=mc.frames, seed=mc.seed, stream=(index,), allow_experimental=True)
        )
        model = compute_rates(scenario)
    except Exception as exc:  # reported in the status column
        return _nan_row(SIMULATE_COLUMNS, length, _failure(exc))
    return {
        "L_km": length,
        "R_sim": sim.sifted_rate,
        "R_sim_se": sim.sifted_rate_se,
        "E_sim": sim.qber if sim.qber_defined else math.nan,
        "E_sim_se": sim.qber_se if sim.qber_defined else math.nan,
        "R_model": float(model.sifted_rate),
        "E_model": float(model.qber),
        "status": "ok" if sim.qber_defined else "no signal",
    }


_POINT = {"rates": _rates_point, "optimize": _optimize_point, "simulate": _simulate_point}
_COLUMNS = {"rates": RATES_COLUMNS, "optimize": OPTIMIZE_COLUMNS, "simulate": SIMULATE_COLUMNS}


def _run_point(args):
    command, config, index, length = args
    return _POINT[command](config, index, length)


def run_sweep(command: str, config: ScenarioConfig, jobs: int = 1) -> list:
    """Rows of ``command`` for every configured length, in input order."""
    tasks = [(command, config, i, float(L)) for i, L in enumerate(config.lengths)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(_run_point, tasks))
    return [_run_point(t) for t in tasks]


def sigma_footer(rows) -> dict:
    """sigma_e of R and E over the rows where both values are defined."""
    good = [r for r in rows if r["status"] == "ok"]
    out = {c: "" for c in SIMULATE_COLUMNS}
    out["L_km"] = "sigma_e"
    for sim, mod in (("R_sim", "R_model"), ("E_sim", "E_model")):
        try:
            out[sim] = relative_deviation([r[sim] for r in good], [r[mod] for r in good])
        except DomainError:
            out[sim] = math.nan
    return out


def format_csv(columns, rows, footer=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows + ([footer] if footer else []):
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _sweep_exit(rows) -> int:
    bad = sum(1 for r in rows if r["status"].startswith(_FAILED) or r["status"] == "no signal")
    if not bad:
        return EXIT_OK
    return EXIT_NUMERIC if bad == len(rows) else EXIT_PARTIAL


def _calibration_report(fit) -> tuple[str, str]:
    lines = [
        f"{'parameter':<22}{'estimate':>16}{'std error':>16}",
        "-" * 54,
    ]
    for name in FIT_PARAMETERS:
        lines.append(f"{name:<22}{fit.estimates[name]:>16.6g}{fit.standard_errors[name]:>16.3g}")
    lines += [
        "-" * 54,
        f"sigma_e     {fit.sigma_e:.6g}",
        f"objective   {fit.objective:.6g} (initial {fit.initial_objective:.6g})",
        f"evaluations {fit.iterations}",
        f"status      {fit.status}" + (f" ({'; '.join(fit.issues)})" if fit.issues else ""),
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["parameter", "estimate", "std_error"])
    for name in FIT_PARAMETERS:
        writer.writerow([name, _fmt(fit.estimates[name]), _fmt(fit.standard_errors[name])])
    writer.writerow(["sigma_e", _fmt(fit.sigma_e), ""])
    writer.writerow(["status", fit.status, ""])
    return "\n".join(lines) + "\n", buf.getvalue()


def _default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env is None or not env.strip():
        return os.cpu_count() or 1
    try:
        jobs = int(env)
    except ValueError:
        raise ParseError(f"{JOBS_ENV} must be a positive integer, got {env!r}") from None
    if jobs < 1:
        raise ParseError(f"{JOBS_ENV} must be a positive integer, got {env!r}")
    return jobs


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkd-linkopt",
        description="Key rates, dead-time optimisation, Monte Carlo checks and detector calibration for gated-detector QKD links.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "rates": "model rates at the configured dead time",
        "optimize": "optimise the dead time (and mu1) per distance",
        "simulate": "Monte Carlo rates next to the model",
        "calibrate": "fit detector parameters to click-probability data",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="scenario configuration file")
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("--seed", type=int, help="override the Monte Carlo seed")
        p.add_argument("--jobs", type=_positive_int, help=f"worker processes (default: ${JOBS_ENV} or CPU count)")
        p.add_argument("--fixed-mu1m", type=float, metavar="X", help="optimise the dead time only, with mu1 held at X")
        if name == "calibrate":
            p.add_argument("--data", help="calibration CSV (overrides [calibration] data)")
    return parser


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _calibrate(config: ScenarioConfig, args) -> int:
    path = args.data or config.calibration.data
    if path is None:
        raise ParseError("no calibration data: pass --data or set [calibration] data", field="calibration.data")
    dataset = CalibrationDataset.from_csv(
        path, frame_duration=config.calibration.frame_duration, frame_period=config.calibration.frame_period
    )
    guess = config.scenario.detectors[0]
    code = EXIT_OK
    try:
        fit = fit_detector(dataset, guess)
    except ConvergenceError as exc:
        fit, code = exc.best, EXIT_NUMERIC
        print(f"qkd-linkopt: {exc}; reporting best-so-far", file=sys.stderr)
    table, text = _calibration_report(fit)
    sys.stdout.write(table)
    if args.out:
        _emit(text, args.out)
    else:
        sys.stdout.write("\n" + text)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ParseError("--seed must be >= 0")
            config = replace(config, montecarlo=replace(config.montecarlo, seed=args.seed))
        if args.fixed_mu1m is not None:
            config = replace(
                config, optimizer=replace(config.optimizer, mode="fixed-mu1m", mu1_min=args.fixed_mu1m, mu_bounds=None)
            )
            config.problem()
        jobs = args.jobs if args.jobs is not None else _default_jobs()
        if args.command == "calibrate":
            return _calibrate(config, args)
        rows = run_sweep(args.command, config, jobs)
    except (ParseError, InvariantError, DomainError, OSError) as exc:
        print(f"qkd-linkopt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericError, ArithmeticError) as exc:
        print(f"qkd-linkopt: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    footer = sigma_footer(rows) if args.command == "simulate" and rows else None
    _emit(format_csv(_COLUMNS[args.command], rows, footer), args.out)
    code = _sweep_exit(rows)
    if code != EXIT_OK:
        failed = [r for r in rows if r["status"].startswith(_FAILED) or r["status"] == "no signal"]
        print(f"qkd-linkopt: {len(failed)} of {len(rows)} points failed", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
