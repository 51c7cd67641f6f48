"""Afterpulsing- and dead-time-aware performance model for gated-detector QKD links."""
from .calibration import CalibrationDataset, FitResult, fit_detector, predict_click_prob, synthetic_dataset
from .config import ScenarioConfig, load_config, parse_config
from .detector import (
    DetectionSolution,
    beta_branch_average,
    beta_factor,
    beta_from_counts,
    dead_time_factor,
    non_detection_prob,
    per_gate_afterpulse,
    solve_detection,
    solve_fixed_point,
)
from .errors import (
    ConvergenceError,
    DomainError,
    IdentifiabilityWarning,
    InvariantError,
    NoSignalError,
    NumericError,
    ParseError,
    ValidityWarning,
)
from .montecarlo import SimConfig, SimResult, relative_deviation, simulate
from .optimize import OptimizationProblem, OptimizationResult, optimize, scan_distance
from .params import DetectorParams, LinkParams, PhaseEnsemble, SourceEnsemble, TimingParams
from .rates import RateReport, compute_rates, secret_key_rate
from .scenario import ProtocolKind, Scenario

__version__ = "0.1.0"

__all__ = [
    "CalibrationDataset",
    "FitResult",
    "fit_detector",
    "predict_click_prob",
    "synthetic_dataset",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "DetectionSolution",
    "beta_branch_average",
    "beta_factor",
    "beta_from_counts",
    "dead_time_factor",
    "non_detection_prob",
    "per_gate_afterpulse",
    "solve_detection",
    "solve_fixed_point",
    "ConvergenceError",
    "DomainError",
    "IdentifiabilityWarning",
    "InvariantError",
    "NoSignalError",
    "NumericError",
    "ParseError",
    "ValidityWarning",
    "SimConfig",
    "SimResult",
    "relative_deviation",
    "simulate",
    "OptimizationProblem",
    "OptimizationResult",
    "optimize",
    "scan_distance",
    "DetectorParams",
    "LinkParams",
    "PhaseEnsemble",
    "SourceEnsemble",
    "TimingParams",
    "RateReport",
    "compute_rates",
    "secret_key_rate",
    "ProtocolKind",
    "Scenario",
]
