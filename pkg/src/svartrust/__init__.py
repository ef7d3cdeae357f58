"""Sparse structural VAR discovery under an imperfect edge prior, with
per-edge trust in the prior learned by empirical Bayes."""

__version__ = "0.1.0"

from .calibration import CalibratedPrior, TrustParams
from .datagen import GroundTruth, NoiseSpec, TimeSeriesData
from .evaluation import MetricsReport, ScoredGraph, evaluate
from .harness import ExperimentConfig, run_grid, run_single
from .objective import ObjectiveConfig
from .optimizer import FitResult, OptimizerConfig, fit
from .prior import CorruptionSpec, PriorMatrix, make_prior

__all__ = [
    "CalibratedPrior", "CorruptionSpec", "ExperimentConfig", "FitResult",
    "GroundTruth", "MetricsReport", "NoiseSpec", "ObjectiveConfig",
    "OptimizerConfig", "PriorMatrix", "ScoredGraph", "TimeSeriesData",
    "TrustParams", "evaluate", "fit", "make_prior", "run_grid", "run_single",
]
