"""Fit the internal detector parameters (eta, p_dc, Q, tau) to click-probability data.

The forward model is the single-detector fixed point with no interferometer,
P_ph0 = exp(-eta mu). Records at mu = 0 pin the dark-count probability, records
with light pin the efficiency, and the dependence on gate frequency and dead
time separates the afterpulse amplitude from its decay time. The fit itself is
joint over all records.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .detector import solve_fixed_point
from .errors import ConvergenceError, DomainError, IdentifiabilityWarning, ParseError
from .params import DetectorParams, TimingParams
from .presets import CALIBRATION_MU

__all__ = [
    "FIT_PARAMETERS",
    "DEFAULT_BOUNDS",
    "CalibrationDataset",
    "FitResult",
    "predict_click_prob",
    "fit_detector",
    "synthetic_dataset",
    "relative_fit_error",
    "SYNTHETIC_FREQUENCIES",
    "SYNTHETIC_DEAD_TIMES",
]

#: Fitted quantities, in the order used by estimate vectors and covariances.
FIT_PARAMETERS = ("efficiency", "dark_count_prob", "afterpulse_amplitude", "afterpulse_decay")

#: Default box constraints (SI units).
DEFAULT_BOUNDS = {
    "efficiency": (1e-4, 1.0),
    "dark_count_prob": (1e-10, 1e-2),
    "afterpulse_amplitude": (1e-13, 1e-6),
    "afterpulse_decay": (1e-8, 1e-2),
}

_COLUMNS = ("F_hz", "dead_time_s", "mu", "p_click")
_PREDICT_TOL = 1e-13


@dataclass(frozen=True)
class CalibrationDataset:
    """Measured click probabilities with their operating points.

    All record fields are one-dimensional arrays of equal length. Every
    record shares the frame settings ``frame_duration`` (t_S) and
    ``frame_period`` (t_fr).
    """

    frequency: np.ndarray
    dead_time: np.ndarray
    mu: np.ndarray
    p_click: np.ndarray
    weight: np.ndarray = None
    frame_duration: float = 1.0
    frame_period: float = 1.0

    def __post_init__(self):
        arrays = {}
        for name in ("frequency", "dead_time", "mu", "p_click"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
        n = arrays["frequency"].size
        w = np.ones(n) if self.weight is None else np.atleast_1d(np.asarray(self.weight, dtype=float))
        arrays["weight"] = w
        if any(a.ndim != 1 or a.size != n for a in arrays.values()):
            raise DomainError("calibration records must be 1-d arrays of equal length")
        if n == 0:
            raise DomainError("calibration dataset is empty")
        if np.any((arrays["p_click"] < 0) | (arrays["p_click"] > 1)):
            raise DomainError("measured click probabilities must lie in [0, 1]")
        if np.any(arrays["frequency"] <= 0) or np.any(arrays["dead_time"] < 0) or np.any(arrays["mu"] < 0):
            raise DomainError("frequency must be > 0; dead time and mu must be >= 0")
        if np.any(w <= 0):
            raise DomainError("weights must be > 0")
        if self.frame_period < self.frame_duration:
            raise DomainError("frame_period must be >= frame_duration")
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.frequency.size

    @property
    def timing(self) -> TimingParams:
        return TimingParams(self.frequency, self.frame_duration, self.frame_period)

    def identifiability_issues(self) -> list[str]:
        """Reasons the dataset may not determine all four parameters."""
        issues = []
        if np.unique(self.dead_time).size < 2:
            issues.append("fewer than two distinct dead times")
        if not np.any(self.mu == 0):
            issues.append("no dark (mu = 0) records")
        if not np.any(self.mu > 0):
            issues.append("no records with light (mu > 0)")
        if np.unique(self.frequency).size < 2:
            issues.append("a single gate frequency")
        return issues

    @classmethod
    def from_csv(cls, path, frame_duration: float = 1.0, frame_period: float | None = None) -> CalibrationDataset:
        """Read ``F_hz, dead_time_s, mu, p_click[, weight]`` records.

        A header row is required and '#' starts a comment. Blank lines are
        skipped. Malformed content raises :class:`ParseError` with the line
        number.
        """
        path = Path(path)
        rows, header, header_line = [], None, None
        with path.open(encoding="utf-8", newline="") as fh:
            for lineno, raw in enumerate(fh, start=1):
                text = raw.split("#", 1)[0].strip()
                if not text:
                    continue
                cells = [c.strip() for c in next(csv.reader([text]))]
                if header is None:
                    header, header_line = cells, lineno
                    if tuple(header[:4]) != _COLUMNS or len(header) > 5 or header[4:] not in ([], ["weight"]):
                        raise ParseError(
                            f"header must be {', '.join(_COLUMNS)}[, weight]; got {', '.join(header)}",
                            source=path, line=lineno,
                        )
                    continue
                if len(cells) != len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(cells)}", source=path, line=lineno)
                values = []
                for name, cell in zip(header, cells):
                    try:
                        v = float(cell)
                    except ValueError:
                        raise ParseError(f"not a number: {cell!r}", source=path, line=lineno, field=name) from None
                    if not math.isfinite(v):
                        raise ParseError(f"not finite: {cell!r}", source=path, line=lineno, field=name)
                    values.append(v)
                F, dt, mu, pc = values[:4]
                if F <= 0:
                    raise ParseError("frequency must be > 0", source=path, line=lineno, field="F_hz")
                if dt < 0 or dt >= frame_duration:
                    raise ParseError("dead time must lie in [0, t_S)", source=path, line=lineno, field="dead_time_s")
                if mu < 0:
                    raise ParseError("mu must be >= 0", source=path, line=lineno, field="mu")
                if not 0 <= pc <= 1:
                    raise ParseError("click probability must lie in [0, 1]", source=path, line=lineno, field="p_click")
                if len(values) == 5 and values[4] <= 0:
                    raise ParseError("weight must be > 0", source=path, line=lineno, field="weight")
                rows.append(values)
        if header is None:
            raise ParseError("missing header row", source=path, line=1)
        if not rows:
            raise ParseError("no data records", source=path, line=header_line)
        data = np.array(rows)
        return cls(
            frequency=data[:, 0],
            dead_time=data[:, 1],
            mu=data[:, 2],
            p_click=data[:, 3],
            weight=data[:, 4] if data.shape[1] == 5 else None,
            frame_duration=frame_duration,
            frame_period=frame_duration if frame_period is None else frame_period,
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_COLUMNS + ("weight",))
            for row in zip(self.frequency, self.dead_time, self.mu, self.p_click, self.weight):
                writer.writerow([format(v, ".17g") for v in row])


def predict_click_prob(
    params: DetectorParams, frequency, dead_time, mu, frame_duration: float = 1.0, frame_period: float | None = None
):
    """Corrected click probability P_TC of a single detector illuminated with mean photon number ``mu``.

    ``params.dead_time`` is ignored in favour of ``dead_time``; every argument
    except ``params`` broadcasts.
    """
    frame_period = frame_duration if frame_period is None else frame_period
    det = params.replace(dead_time=np.asarray(dead_time, dtype=float))
    timing = TimingParams(np.asarray(frequency, dtype=float), frame_duration, frame_period)
    p_ph0 = np.exp(-params.efficiency * np.asarray(mu, dtype=float))
    return solve_fixed_point(p_ph0, det, timing, tol=_PREDICT_TOL).corrected_total


def relative_fit_error(measured, predicted) -> float:
    """sigma_e = sqrt( sum ((P_meas - P_pred) / P_pred)^2 / (M - 1) )."""
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if measured.size < 2:
        return math.nan
    rel = (measured - predicted) / predicted
    return math.sqrt(math.fsum(rel**2) / (measured.size - 1))


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit_detector`.

    Attributes
    ----------
    params : DetectorParams
        Fitted detector (dead time copied from the initial guess).
    estimates, standard_errors : dict
        Keyed by :data:`FIT_PARAMETERS`. Standard errors come from the
        Gauss-Newton covariance scaled by the residual variance.
    covariance : ndarray
        4x4 covariance of the estimates (linear parameter space).
    correlation : ndarray
        Matching correlation matrix.
    sigma_e : float
        RMS relative deviation of data from the fitted model.
    objective, initial_objective : float
        Weighted sum of squared relative residuals at the estimate and at
        the initial guess.
    status : str
        ``converged`` or ``unidentifiable`` (the fit finished but the
        Jacobian is rank deficient or the dataset design is incomplete).
    trace : ndarray
        Every parameter vector the objective was evaluated at, shape (k, 4),
        for auditing bound feasibility.
    """

    params: DetectorParams
    estimates: dict
    standard_errors: dict
    covariance: np.ndarray
    correlation: np.ndarray
    sigma_e: float
    objective: float
    initial_objective: float
    status: str
    iterations: int
    message: str
    bounds: dict
    trace: np.ndarray = field(repr=False)
    issues: tuple = ()

    def relative_errors(self, truth: DetectorParams) -> dict:
        """|estimate / true - 1| for each fitted parameter."""
        return {k: abs(self.estimates[k] / getattr(truth, k) - 1.0) for k in FIT_PARAMETERS}


def fit_detector(
    dataset: CalibrationDataset,
    initial_guess: DetectorParams,
    bounds: dict | None = None,
    ftol: float = 1e-10,
    max_iter: int = 500,
    xtol: float = 1e-15,
    x_scale="jac",
) -> FitResult:
    """Weighted least-squares fit of (eta, p_dc, Q, tau) on relative residuals.

    The search runs over log-parameters inside the box ``bounds`` with a
    bounded trust-region method.

    Raises
    ------
    DomainError
        The initial guess lies outside ``bounds``.
    ConvergenceError
        ``max_iter`` objective evaluations were exhausted; ``best`` holds the
        best-so-far :class:`FitResult`.
    """
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    lo = np.array([bounds[k][0] for k in FIT_PARAMETERS], dtype=float)
    hi = np.array([bounds[k][1] for k in FIT_PARAMETERS], dtype=float)
    x0 = np.array([getattr(initial_guess, k) for k in FIT_PARAMETERS], dtype=float)
    if np.any(lo <= 0) or np.any(lo >= hi):
        raise DomainError("bounds must satisfy 0 < low < high")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise DomainError("initial guess lies outside the parameter bounds")

    issues = dataset.identifiability_issues()
    if issues:
        warnings.warn("calibration dataset: " + "; ".join(issues), IdentifiabilityWarning, stacklevel=2)

    sqrt_w = np.sqrt(dataset.weight)
    trace = []

    def model(x):
        det = initial_guess.replace(**dict(zip(FIT_PARAMETERS, x)))
        return predict_click_prob(
            det, dataset.frequency, dataset.dead_time, dataset.mu, dataset.frame_duration, dataset.frame_period
        )

    def residuals(log_x):
        x = np.exp(log_x)
        trace.append(x)
        pred = model(x)
        return sqrt_w * (dataset.p_click - pred) / pred

    r0 = residuals(np.log(x0))
    initial_objective = float(r0 @ r0)
    sol = least_squares(
        residuals,
        np.log(x0),
        bounds=(np.log(lo), np.log(hi)),
        method="trf",
        jac="3-point",
        x_scale=x_scale,
        ftol=ftol,
        xtol=xtol,
        gtol=1e-12,
        max_nfev=max_iter,
    )
    x = np.clip(np.exp(sol.x), lo, hi)
    pred = model(x)
    r = sqrt_w * (dataset.p_click - pred) / pred
    objective = float(r @ r)

    m, n = r.size, x.size
    jac = sol.jac
    sv = np.linalg.svd(jac, compute_uv=False)
    rank_deficient = sv.size < n or sv[-1] <= sv[0] * 1e-10
    dof = max(m - n, 1)
    with np.errstate(all="ignore"):
        cov_log = np.linalg.pinv(jac.T @ jac) * (objective / dof)
        cov = cov_log * np.outer(x, x)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        corr = cov / np.outer(se, se)
    if rank_deficient:
        issues = issues + ["Jacobian is rank deficient"]
    status = "unidentifiable" if issues else "converged"

    result = FitResult(
        params=initial_guess.replace(**dict(zip(FIT_PARAMETERS, x))),
        estimates=dict(zip(FIT_PARAMETERS, x.tolist())),
        standard_errors=dict(zip(FIT_PARAMETERS, se.tolist())),
        covariance=cov,
        correlation=corr,
        sigma_e=relative_fit_error(dataset.p_click, pred),
        objective=objective,
        initial_objective=initial_objective,
        status=status,
        iterations=int(sol.nfev),
        message=str(sol.message),
        bounds=bounds,
        trace=np.array(trace),
        issues=tuple(issues),
    )
    if sol.status == 0:
        raise ConvergenceError(
            f"calibration fit did not converge in {max_iter} evaluations",
            residual=objective,
            iterations=int(sol.nfev),
            best=result,
        )
    return result


#: Gate frequencies of the default synthetic sweep: 0.25 MHz steps up to the
#: 8 MHz gating limit of the reference detector (Hz). The decay time is only
#: seen through the dead-time slope of the afterpulse term, so a dense sweep
#: at high frequency is what pins it down.
SYNTHETIC_FREQUENCIES = tuple(0.25e6 * k for k in range(1, 33))
#: Dead times of the default synthetic sweep (s).
SYNTHETIC_DEAD_TIMES = (2e-6, 5e-6, 10e-6, 20e-6)


def synthetic_dataset(
    params: DetectorParams,
    frequencies=SYNTHETIC_FREQUENCIES,
    dead_times=SYNTHETIC_DEAD_TIMES,
    mus=(0.0, CALIBRATION_MU),
    noise: float = 0.0,
    seed=None,
    frame_duration: float = 1.0,
) -> CalibrationDataset:
    """Model-generated records over the full (F, dead time, mu) grid.

    With ``noise > 0`` each probability is multiplied by ``1 + noise * g``,
    g standard normal, drawn from ``numpy.random.default_rng(seed)``.
    """
    F, dt, mu = (a.ravel() for a in np.meshgrid(frequencies, dead_times, mus, indexing="ij"))
    p = predict_click_prob(params, F, dt, mu, frame_duration)
    if noise:
        rng = np.random.default_rng(seed)
        p = np.clip(p * (1.0 + noise * rng.standard_normal(p.shape)), 0.0, 1.0)
    return CalibrationDataset(F, dt, mu, p, frame_duration=frame_duration, frame_period=frame_duration)
