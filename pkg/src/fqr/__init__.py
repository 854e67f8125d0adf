"""Locally sparse functional quantile regression with convolution smoothing."""
from .basis import GramSet, SplineBasis, build_basis, compute_gram_set, eval_basis
from .design import (DataError, DesignMatrices, FunctionalDataset, assemble_design, load_csv,
                     save_csv)
from .estimator import CLoSEQuantileRegressor
from .inference import (BootstrapSummary, alpha_intervals, build_pcb, build_scb,
                        sandwich_variance_oracle, wild_bootstrap)
from .loss import Kernel, SmoothedLossSpec, check_loss, default_bandwidth, smoothed_check
from .penalty import ScadParams, fscad_value, scad
from .simlab import MetricReport, SimScenario, generate, run_study
from .solver import ConvergenceError, FitResult, SolverConfig, fit_close, fit_sql
from .tune import TuneGrid, default_grid, tune_fit

__all__ = [
    "GramSet", "SplineBasis", "build_basis", "compute_gram_set", "eval_basis",
    "DataError", "DesignMatrices", "FunctionalDataset", "assemble_design", "load_csv", "save_csv",
    "CLoSEQuantileRegressor",
    "BootstrapSummary", "alpha_intervals", "build_pcb", "build_scb", "sandwich_variance_oracle",
    "wild_bootstrap",
    "Kernel", "SmoothedLossSpec", "check_loss", "default_bandwidth", "smoothed_check",
    "ScadParams", "fscad_value", "scad",
    "MetricReport", "SimScenario", "generate", "run_study",
    "ConvergenceError", "FitResult", "SolverConfig", "fit_close", "fit_sql",
    "TuneGrid", "default_grid", "tune_fit",
]
__version__ = "0.1.0"
