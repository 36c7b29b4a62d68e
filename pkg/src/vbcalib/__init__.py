"""Variational inference for area-level survey models with
simulation-based calibration of uncertainty intervals."""

from .advi import AdviConfig, FitDivergenceError, PosteriorFit, VariationalParams, elbo_estimate, elbo_gradient
from .advi import fit as advi_fit
from .calibration import (
    CalibrationAdjustment,
    CalibrationConfig,
    CalibrationResult,
    CalibratedIntervals,
    InsufficientReplicatesError,
    PivotMatrix,
    ReplicateDraw,
    ReplicateFitSummary,
    bias_adjustment,
    calibrate,
    draw_replicates,
    original_intervals,
    pivot_statistics,
    pivotal_intervals,
    refit_replicates,
    rescaled_intervals,
    scale_adjustment,
)
from .data import DataError, Dataset, DomainObservation, read_dataset, standardized_counts, write_dataset
from .estimators import AdviEstimator, GibbsEstimator, make_estimator
from .gibbs import GibbsConfig, UnsupportedPriorError, gibbs_fit_fh
from .harness import (
    CoverageReport,
    StudyAbortedError,
    StudyConfig,
    StudyResult,
    WorkflowResult,
    ppc_export,
    run_fh_study,
    run_production_workflow,
)
from .models import (
    FhParams,
    FhSimConfig,
    FhvParams,
    FhvSimConfig,
    FixedHypers,
    build_model,
    log_joint_fh,
    log_joint_fhv,
    posterior_predictive_draw,
    simulate_fh,
    simulate_fhv,
)
from .priors import FLAT_HYPERPRIORS, HyperPriorSpec, PriorSpec

__version__ = "0.1.0"

__all__ = [
    "AdviConfig",
    "AdviEstimator",
    "CalibratedIntervals",
    "CalibrationAdjustment",
    "CalibrationConfig",
    "CalibrationResult",
    "CoverageReport",
    "DataError",
    "Dataset",
    "DomainObservation",
    "FLAT_HYPERPRIORS",
    "FhParams",
    "FhSimConfig",
    "FhvParams",
    "FhvSimConfig",
    "FitDivergenceError",
    "FixedHypers",
    "GibbsConfig",
    "GibbsEstimator",
    "HyperPriorSpec",
    "InsufficientReplicatesError",
    "PivotMatrix",
    "PosteriorFit",
    "PriorSpec",
    "ReplicateDraw",
    "ReplicateFitSummary",
    "StudyAbortedError",
    "StudyConfig",
    "StudyResult",
    "UnsupportedPriorError",
    "VariationalParams",
    "WorkflowResult",
    "advi_fit",
    "bias_adjustment",
    "build_model",
    "calibrate",
    "draw_replicates",
    "elbo_estimate",
    "elbo_gradient",
    "gibbs_fit_fh",
    "log_joint_fh",
    "log_joint_fhv",
    "make_estimator",
    "original_intervals",
    "pivot_statistics",
    "pivotal_intervals",
    "posterior_predictive_draw",
    "ppc_export",
    "read_dataset",
    "refit_replicates",
    "rescaled_intervals",
    "run_fh_study",
    "run_production_workflow",
    "scale_adjustment",
    "simulate_fh",
    "simulate_fhv",
    "standardized_counts",
    "write_dataset",
]
