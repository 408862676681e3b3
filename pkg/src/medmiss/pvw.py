"""Predictive value weighting: a multi-step misclassification correction.

Step one estimates the true-mediator and observation models by EM on the
marginal likelihood of M* alone (the outcome never enters, so those
estimates are genuinely outcome-free). Step two converts them plus a
provisional naive outcome fit into per-subject predictive values
lambda_i = P(M_i = 1 | M*_i, X_i, C_i, Z_i, Y_i), expands every subject into
one row per latent mediator class weighted by (lambda_i, 1 - lambda_i), and
refits the outcome model on the expansion. The refit sharpens the outcome
coefficients inside lambda, so run_pvw repeats the value/refit pair until
the outcome coefficients stabilize; the mediator and observation estimates
from step one are never revisited.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError, DegenerateSubjectError
from . import glm
from .em import EmConfig, FitReport, run_misclassification_em
from .model import ParameterSet, fit_naive, joint_log_components


@dataclass
class PredictiveValues:
    """Per-subject posterior probabilities that the true mediator is class 1."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ConfigurationError("predictive values must be a vector")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ConfigurationError("predictive values must lie in [0, 1]")


def estimate_misclassification_model(dataset, config=None):
    """Step 1: EM fit of the mediator and observation models, outcome excluded."""
    return run_misclassification_em(dataset, config)


def compute_predictive_values(beta, gamma, provisional_theta, dataset, family,
                              sigma2=None, interaction=False,
                              specificity_fixed=False):
    """Bayes inversion of the step-1 mixture, conditioned on Y.

    The provisional outcome coefficients come from the naive analysis fit;
    they only grade how compatible each latent class is with the observed
    outcome, and the class posterior is

        lambda_i  proportional to  pi_i1 P(M* | M=1, Z) f(y | M=1; theta_prov),

    normalized against the class-2 term.
    """
    params = ParameterSet(
        beta=np.asarray(beta, dtype=float),
        gamma=np.asarray(gamma, dtype=float),
        theta=np.asarray(provisional_theta, dtype=float),
        sigma2=sigma2,
        interaction=interaction,
        specificity_fixed=specificity_fixed,
    )
    comp1, comp2 = joint_log_components(params, dataset, family)
    degenerate = np.isneginf(comp1) & np.isneginf(comp2)
    if np.any(degenerate):
        raise DegenerateSubjectError(int(np.argmax(degenerate)))
    return PredictiveValues(expit(comp1 - comp2))


def weighted_expansion(predictive_values, dataset, interaction=False):
    """Duplicate each subject once per latent class with weights (lambda, 1-lambda).

    Returns (design, response, weights) with exactly 2n rows; the first n carry
    mediator indicator 1, the last n indicator 0.
    """
    lam = predictive_values.values
    if lam.shape != (dataset.n,):
        raise ConfigurationError("predictive values must have one entry per subject")
    design = np.vstack([
        dataset.outcome_design(1.0, interaction),
        dataset.outcome_design(0.0, interaction),
    ])
    response = np.concatenate([dataset.y, dataset.y])
    weights = np.concatenate([lam, 1.0 - lam])
    return design, response, weights


def fit_outcome_weighted(predictive_values, dataset, family, interaction=False,
                         start=None):
    """Step 2: outcome-family fit on the weighted class expansion."""
    design, response, weights = weighted_expansion(
        predictive_values, dataset, interaction
    )
    return glm.fit_weighted_glm(
        design, response, weights, family,
        column_names=dataset.outcome_column_names(interaction),
        start=start,
    )


MAX_OUTCOME_PASSES = 200
OUTCOME_PASS_TOLERANCE = 1e-8


def run_pvw(dataset, family, config=None, interaction=False):
    """Full predictive value weighting pipeline.

    Returns a FitReport whose beta/gamma come from step 1 and whose theta is
    the stabilized step-2 weighted outcome fit; average sensitivity and
    specificity are the step-1 estimates. The first pass computes predictive
    values with the naive outcome coefficients; later passes reuse the
    previous pass's refit, stopping once successive coefficient vectors agree
    within tolerance.
    """
    if config is None:
        config = EmConfig()
    step1 = run_misclassification_em(dataset, config)
    naive = fit_naive(dataset, family, interaction)
    theta = naive.theta_star
    sigma2 = naive.sigma2_star
    outcome_fit = None
    passes = 0
    stabilized = False
    for passes in range(1, MAX_OUTCOME_PASSES + 1):
        lam = compute_predictive_values(
            step1.beta, step1.gamma, theta, dataset, family,
            sigma2=sigma2, interaction=interaction,
            specificity_fixed=step1.specificity_fixed,
        )
        outcome_fit = fit_outcome_weighted(
            lam, dataset, family, interaction, start=theta
        )
        shift = float(np.max(np.abs(outcome_fit.coefficients - theta)))
        theta = outcome_fit.coefficients
        sigma2 = outcome_fit.sigma2
        if shift < OUTCOME_PASS_TOLERANCE * (1.0 + float(np.max(np.abs(theta)))):
            stabilized = True
            break
    params = ParameterSet(
        beta=step1.beta,
        gamma=step1.gamma,
        theta=theta,
        sigma2=sigma2,
        interaction=interaction,
        specificity_fixed=step1.specificity_fixed,
    )
    return FitReport(
        method="pvw",
        params=params,
        loglik_trace=step1.loglik_trace,
        iterations=step1.iterations,
        converged=step1.converged and outcome_fit.converged and stabilized,
        avg_sensitivity=step1.avg_sensitivity,
        avg_specificity=step1.avg_specificity,
        label_swap_applied=step1.label_swap_applied,
        metadata={
            "step1": "misclassification-only EM",
            "step2": "weighted outcome refits on the class expansion",
            "outcome_passes": passes,
            "specificity_fixed": step1.specificity_fixed,
        },
    )
