"""Causal mediation analysis with a misclassified binary mediator.

Estimates the true-mediator, misclassification, and outcome models jointly
from data where only an error-prone binary proxy of the mediator is
observed, then turns fitted parameters into controlled direct, natural
direct, and natural indirect effects. Three estimation routes are provided:
a moment correction for Normal outcomes, predictive value weighting, and a
full latent-class EM with optional extrapolation acceleration.
"""

from .effects import EffectEstimates, EffectQuery, SCALES, compute_effects
from .em import EmConfig, FitReport, run_em, run_misclassification_em
from .exceptions import (
    ConfigurationError,
    CorrectionInfeasibleError,
    DegenerateSubjectError,
    EvaluationError,
    MalformedRowError,
    MediatorCodingError,
    MedmissError,
    MissingColumnError,
    OutputError,
    RankDeficiencyError,
    SeparationWarning,
    UnidentifiableFitError,
    UnsupportedFamilyError,
)
from .glm import BERNOULLI, NORMAL, POISSON, family_by_name, fit_weighted_glm
from .model import MediationDataset, NaiveFit, ParameterSet, fit_naive
from .ols import run_ols_correction
from .pvw import run_pvw
from .simulate import (
    ScenarioSpec,
    StudySummary,
    emit_results,
    generate_dataset,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "BERNOULLI",
    "ConfigurationError",
    "CorrectionInfeasibleError",
    "DegenerateSubjectError",
    "EffectEstimates",
    "EffectQuery",
    "EmConfig",
    "EvaluationError",
    "FitReport",
    "MalformedRowError",
    "MediationDataset",
    "MediatorCodingError",
    "MedmissError",
    "MissingColumnError",
    "NORMAL",
    "NaiveFit",
    "OutputError",
    "POISSON",
    "ParameterSet",
    "RankDeficiencyError",
    "SCALES",
    "ScenarioSpec",
    "SeparationWarning",
    "StudySummary",
    "UnidentifiableFitError",
    "UnsupportedFamilyError",
    "compute_effects",
    "emit_results",
    "family_by_name",
    "fit_naive",
    "fit_weighted_glm",
    "generate_dataset",
    "run_em",
    "run_misclassification_em",
    "run_ols_correction",
    "run_pvw",
    "run_study",
    "__version__",
]
