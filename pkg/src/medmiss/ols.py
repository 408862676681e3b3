"""Least-squares moment correction for Normal outcomes.

The naive least-squares fit substitutes the observed mediator indicator for
the true one, which attenuates and shifts the coefficient estimates. With
the misclassification model estimated in a first EM step, the observed
indicator can be replaced by the corrected proxy

    m~_i = (1{M*_i = 1} - a0) / (1 - a0 - a1),

where a0 is the average false-positive rate and a1 the average
false-negative rate. The proxy is unbiased for the true indicator, and
because the outcome design is linear in that indicator (its square is
itself), plugging the proxy into the cross-product moments of the normal
equations yields a consistent estimator:

    G theta = h,
    G = sum_i [(1 - m~_i) W_i(0)^T W_i(0) + m~_i W_i(1)^T W_i(1)],
    h = sum_i y_i [(1 - m~_i) W_i(0) + m~_i W_i(1)],

with W_i(m) the outcome design row evaluated at mediator level m. At zero
estimated misclassification the proxy is the observed indicator and the
system is exactly the naive normal equations.
"""

import numpy as np
from scipy.special import expit

from .exceptions import CorrectionInfeasibleError, UnsupportedFamilyError
from . import glm
from .em import EmConfig, FitReport, run_misclassification_em
from .model import ParameterSet


def corrected_normal_equations(dataset, alpha0, alpha1, interaction=False):
    """Build (G, h) with the mediator moments corrected for the given rates.

    alpha0 is the false-positive rate P(M*=1 | M=2) and alpha1 the
    false-negative rate P(M*=2 | M=1), both averaged over subjects. Their sum
    must be below 1 (classification better than chance).
    """
    denom = 1.0 - alpha0 - alpha1
    if denom <= 0:
        raise CorrectionInfeasibleError(denom)
    m_tilde = (dataset.mstar_indicator - alpha0) / denom
    w0 = dataset.outcome_design(0.0, interaction)
    w1 = dataset.outcome_design(1.0, interaction)
    g = (w0 * (1.0 - m_tilde)[:, None]).T @ w0 + (w1 * m_tilde[:, None]).T @ w1
    h = w0.T @ ((1.0 - m_tilde) * dataset.y) + w1.T @ (m_tilde * dataset.y)
    return g, h


def run_ols_correction(dataset, config=None, interaction=False,
                       family=glm.NORMAL):
    """Two-step corrected least squares for a Normal outcome.

    Step 1 runs the misclassification-only EM; step 2 solves the corrected
    normal equations. Raises if the outcome family is not Normal or if the
    corrected moment matrix loses positive definiteness.
    """
    if family.name != "normal":
        raise UnsupportedFamilyError(
            "the least-squares correction supports Normal outcomes only"
        )
    if config is None:
        config = EmConfig()
    step1 = run_misclassification_em(dataset, config)
    if step1.specificity_fixed:
        fpr = np.zeros(dataset.n)
    else:
        fpr = expit(dataset.design_observation @ step1.gamma[1])
    fnr = 1.0 - expit(dataset.design_observation @ step1.gamma[0])
    alpha0 = float(np.mean(fpr))
    alpha1 = float(np.mean(fnr))
    g, h = corrected_normal_equations(dataset, alpha0, alpha1, interaction)
    scaled = g / dataset.n
    eigenvalues = np.linalg.eigvalsh(scaled)
    if eigenvalues[0] <= 1e-10 * max(1.0, eigenvalues[-1]):
        raise CorrectionInfeasibleError(eigenvalues[0])
    theta = np.linalg.solve(g, h)
    rss = float(dataset.y @ dataset.y - 2.0 * theta @ h + theta @ g @ theta)
    sigma2 = max(rss / dataset.n, 1e-12)
    params = ParameterSet(
        beta=step1.beta,
        gamma=step1.gamma,
        theta=theta,
        sigma2=sigma2,
        interaction=interaction,
        specificity_fixed=step1.specificity_fixed,
    )
    return FitReport(
        method="ols",
        params=params,
        loglik_trace=step1.loglik_trace,
        iterations=step1.iterations,
        converged=step1.converged,
        avg_sensitivity=step1.avg_sensitivity,
        avg_specificity=step1.avg_specificity,
        label_swap_applied=step1.label_swap_applied,
        metadata={
            "rate_averaging": "population mean of subject-level rates",
            "false_positive_rate": alpha0,
            "false_negative_rate": alpha1,
            "specificity_fixed": step1.specificity_fixed,
        },
    )
