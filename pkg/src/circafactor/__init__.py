"""Bayesian detection of circadian and other periodic signals in
high-dimensional expression time courses, with cross-probe dependence
captured by a sparse latent factor model."""

from .basis import (
    DesignPair,
    NyquistViolationError,
    PeriodSet,
    TimeGrid,
    fourier_design,
    local_design,
    make_designs,
    standardize_times,
)
from .model import (
    ExpressionMatrix,
    HyperParams,
    ModelState,
    apply_gamma_thresholds,
    apply_theta_thresholds,
    fitted_mean,
    log_likelihood,
    row_center,
)
from .sampler import ChainConfig, PosteriorArchive, ResumeMismatchError, run_chain
from .summaries import (
    AmplitudePhase,
    DiscoveryList,
    RhythmScore,
    amplitude_phase,
    fdr_select,
    marginal_correlation,
    prob_circadian,
    prob_periodic,
    rhythm_scores,
    roc_and_fdr_curves,
)
from .synth import GroundTruth, SynthConfig, generate_dependent, generate_independent
from .baselines import fdr_adjust, fisher_g_test, periodogram
from .diagnostics import effective_sample_size, geweke_joint_test

__all__ = [
    "AmplitudePhase",
    "ChainConfig",
    "DesignPair",
    "DiscoveryList",
    "ExpressionMatrix",
    "GroundTruth",
    "HyperParams",
    "ModelState",
    "NyquistViolationError",
    "PeriodSet",
    "PosteriorArchive",
    "ResumeMismatchError",
    "RhythmScore",
    "SynthConfig",
    "TimeGrid",
    "amplitude_phase",
    "apply_gamma_thresholds",
    "apply_theta_thresholds",
    "effective_sample_size",
    "fdr_adjust",
    "fdr_select",
    "fisher_g_test",
    "fitted_mean",
    "fourier_design",
    "generate_dependent",
    "generate_independent",
    "geweke_joint_test",
    "local_design",
    "log_likelihood",
    "make_designs",
    "marginal_correlation",
    "periodogram",
    "prob_circadian",
    "prob_periodic",
    "rhythm_scores",
    "roc_and_fdr_curves",
    "row_center",
    "run_chain",
    "standardize_times",
    "__version__",
]

__version__ = "0.1.0"
