"""Penalized Poisson regression for region counts with graph-fused baselines.

The main entry points are :func:`fit` (proximal gradient descent),
:func:`debias_and_intervals` (de-biased inference for the covariate effects),
:func:`cohesion_predict` / :func:`tune` (prediction and cross-validation) and
:func:`generate_replicate` (synthetic data).
"""

__version__ = "0.1.0"

from .graph import (
    RegionGraph, build_graph, incidence, laplacian, lattice_graph, partition_laplacian,
)
from .model import Dataset, DataError, ParamVector, grad_loglik, loglik, predicted_mean
from .penalties import FusionKind, PenaltyConfig, fusion_term, smoothed_l1_fusion, soft_threshold
from .solver import (
    FitResult, SolverConfig, SolverDivergence, fit, fit_block_alternating, objective,
)
from .inference import (
    CovarianceKind, DebiasConfig, InferenceResult, debias_and_intervals, empirical_hessian,
    gaussian_error_covariance, sandwich_covariance, solve_debias_rows, zeta_hat,
)
from .predict import FoldPlan, TuningGrid, cohesion_predict, cv_score, make_folds, tune
from .simulate import Scenario, evaluate_replicates, generate_replicate, sample_grf
from .io import load_dataset, write_dataset

__all__ = [
    "RegionGraph", "build_graph", "incidence", "laplacian", "lattice_graph",
    "partition_laplacian", "Dataset", "DataError", "ParamVector", "grad_loglik", "loglik",
    "predicted_mean", "FusionKind", "PenaltyConfig", "fusion_term", "smoothed_l1_fusion",
    "soft_threshold", "FitResult", "SolverConfig", "SolverDivergence", "fit",
    "fit_block_alternating", "objective", "CovarianceKind", "DebiasConfig", "InferenceResult",
    "debias_and_intervals", "empirical_hessian", "gaussian_error_covariance",
    "sandwich_covariance", "solve_debias_rows", "zeta_hat", "FoldPlan", "TuningGrid",
    "cohesion_predict", "cv_score", "make_folds", "tune", "Scenario", "evaluate_replicates",
    "generate_replicate", "sample_grf", "load_dataset", "write_dataset",
]
