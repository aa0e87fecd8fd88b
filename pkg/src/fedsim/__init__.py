"""Deterministic simulator for FedAvg, Nesterov FedAvg and FedMaSS."""

from __future__ import annotations

__version__ = "0.1.0"

from .dataio import (
    Dataset,
    DevicePartition,
    gen_counterexample,
    gen_gaussian_quadratic,
    gen_logistic_classification,
    gen_overparam_regression,
    load_libsvm,
    parse_libsvm,
    partition_even,
    write_libsvm,
)
from .errors import (
    ConfigError,
    ConvergenceFailure,
    DegenerateSpectrum,
    DivergenceError,
    FedsimError,
    InvalidInput,
    ParseError,
)
from .experiments import grid_search, iterations_to_accuracy, solve_fstar, speedup_sweep
from .federation import FederationConfig, Trajectory, aggregate, run, sample_devices
from .objectives import Objective, SpectralReport, measure_bounds, spectral_report
from .schedules import Schedule, StepParams

__all__ = [
    "ConfigError",
    "ConvergenceFailure",
    "Dataset",
    "DegenerateSpectrum",
    "DevicePartition",
    "DivergenceError",
    "FederationConfig",
    "FedsimError",
    "InvalidInput",
    "Objective",
    "ParseError",
    "Schedule",
    "SpectralReport",
    "StepParams",
    "Trajectory",
    "aggregate",
    "gen_counterexample",
    "gen_gaussian_quadratic",
    "gen_logistic_classification",
    "gen_overparam_regression",
    "grid_search",
    "iterations_to_accuracy",
    "load_libsvm",
    "measure_bounds",
    "parse_libsvm",
    "partition_even",
    "run",
    "sample_devices",
    "solve_fstar",
    "spectral_report",
    "speedup_sweep",
    "write_libsvm",
]
