"""Data model and probability computations for the mediation mixture.

Three mechanisms make up the model. A true binary mediator M (classes 1 and
2, class 2 the reference) follows a logistic model in the exposure X and
confounders C. The observed mediator M* follows one logistic model in the
misclassification covariates Z per true class (row 1 of gamma governs
sensitivity, row 2 governs the false-positive side of specificity). The
outcome Y follows a Normal, Bernoulli, or Poisson regression on
(1, X, C, 1{M=1}, X*1{M=1}).

All mixture arithmetic is done in log space; densities for rare outcomes
underflow otherwise.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .exceptions import ConfigurationError, EvaluationError
from . import glm


def _as_matrix(a, n, what):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n:
        raise ConfigurationError("%s must have one row per subject" % what)
    return arr


class MediationDataset:
    """Immutable per-subject records (X, C, Z, M*, Y).

    Parameters
    ----------
    x : exposure vector, length n.
    c : confounder matrix, n rows (a vector is treated as one column).
    z : misclassification covariate matrix, n rows; may share columns with c.
    m_star : observed mediator classes, values in {1, 2}.
    y : outcome vector, type governed by the outcome family at fit time.
    """

    def __init__(self, x, c, z, m_star, y):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ConfigurationError("x must be a vector")
        n = x.shape[0]
        c = _as_matrix(c, n, "c")
        z = _as_matrix(z, n, "z")
        m_star = np.asarray(m_star)
        y = np.asarray(y, dtype=float)
        if m_star.shape != (n,) or y.shape != (n,):
            raise ConfigurationError("m_star and y must have one entry per subject")
        if not np.all(np.isin(m_star, (1, 2))):
            raise ConfigurationError("m_star values must be 1 or 2")
        for name, arr in (("x", x), ("c", c), ("z", z), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("%s contains non-finite entries" % name)
        self.x = x
        self.c = c
        self.z = z
        self.m_star = m_star.astype(np.int64)
        self.y = y
        self.design_mediator = np.column_stack([np.ones(n), x, c])
        self.design_observation = np.column_stack([np.ones(n), z])
        self.mstar_indicator = (self.m_star == 1).astype(float)
        for arr in (self.x, self.c, self.z, self.m_star, self.y,
                    self.design_mediator, self.design_observation,
                    self.mstar_indicator):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def n_confounders(self):
        return self.c.shape[1]

    @property
    def n_misclass_covariates(self):
        return self.z.shape[1]

    def mediator_column_names(self):
        return ["intercept", "x"] + ["c%d" % (j + 1) for j in range(self.n_confounders)]

    def observation_column_names(self):
        return ["intercept"] + ["z%d" % (j + 1) for j in range(self.n_misclass_covariates)]

    def outcome_column_names(self, interaction):
        names = self.mediator_column_names() + ["mediator"]
        if interaction:
            names.append("x_mediator")
        return names

    def outcome_design(self, m_indicator, interaction):
        """Design (1, X, C, m, X*m) for a given mediator indicator vector/scalar."""
        m = np.broadcast_to(np.asarray(m_indicator, dtype=float), (self.n,))
        cols = [self.design_mediator, m[:, None]]
        if interaction:
            cols.append((self.x * m)[:, None])
        return np.column_stack(cols)


@dataclass
class ParameterSet:
    """Full parameter collection (beta, gamma, theta, sigma2).

    beta : (2 + p,) coefficients of the true mediator model on (1, X, C).
    gamma : (2, 1 + q); row 1 sensitivity model, row 2 false-positive model,
        both on (1, Z). With specificity_fixed the second row is the boundary
        "never a false positive" and is stored as intercept -inf, zero slopes.
    theta : outcome coefficients on (1, X, C, m) plus the X*m interaction
        when interaction is True.
    sigma2 : Normal residual variance (None for other families).
    """

    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    sigma2: float | None = None
    interaction: bool = False
    specificity_fixed: bool = False

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.gamma.ndim != 2 or self.gamma.shape[0] != 2:
            raise ConfigurationError("gamma must have two rows")
        if not np.all(np.isfinite(self.beta)):
            raise ConfigurationError("beta must be finite")
        if not np.all(np.isfinite(self.theta)):
            raise ConfigurationError("theta must be finite")
        finite_gamma = np.isfinite(self.gamma)
        if self.specificity_fixed:
            ok = finite_gamma[0].all() and finite_gamma[1, 1:].all() and (
                self.gamma[1, 0] == -np.inf or finite_gamma[1, 0]
            )
            if not ok:
                raise ConfigurationError("gamma row 2 malformed for fixed specificity")
        elif not finite_gamma.all():
            raise ConfigurationError("gamma must be finite")
        if self.sigma2 is not None:
            if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
                raise ConfigurationError("sigma2 must be finite and positive")
        p = self.beta.shape[0] - 2
        expected = 3 + p + (1 if self.interaction else 0)
        if self.theta.shape[0] != expected:
            raise ConfigurationError(
                "theta has %d entries, expected %d" % (self.theta.shape[0], expected)
            )

    @property
    def theta_m(self):
        return float(self.theta[-2] if self.interaction else self.theta[-1])

    @property
    def theta_xm(self):
        return float(self.theta[-1]) if self.interaction else 0.0

    @property
    def theta_x(self):
        return float(self.theta[1])


@dataclass
class NaiveFit:
    """Analysis-model fit that uses M* as if it were the true mediator."""

    beta_star: np.ndarray
    theta_star: np.ndarray
    sigma2_star: float | None = None
    interaction: bool = False
    converged: bool = True


@dataclass
class Responsibilities:
    """Posterior class probabilities, one (P(M=1|...), P(M=2|...)) row per subject."""

    r: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        if self.r.ndim != 2 or self.r.shape[1] != 2:
            raise ConfigurationError("responsibilities must be an n-by-2 matrix")
        if np.any(self.r < 0) or np.any(self.r > 1):
            raise ConfigurationError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(self.r.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("responsibility rows must sum to 1")


def true_mediator_prob(params, dataset):
    """P(M=1 | X, C) per subject under the logistic true-mediator model."""
    return expit(dataset.design_mediator @ params.beta)


def observed_mediator_prob(params, dataset, latent_class):
    """P(M*=1 | M=latent_class, Z) per subject."""
    if latent_class not in (1, 2):
        raise ConfigurationError("latent_class must be 1 or 2")
    if latent_class == 2 and params.specificity_fixed:
        return np.zeros(dataset.n)
    row = params.gamma[latent_class - 1]
    return expit(dataset.design_observation @ row)


def average_sens_spec(params, dataset):
    """(average sensitivity, average specificity) over the sample."""
    sens = float(np.mean(observed_mediator_prob(params, dataset, 1)))
    if params.specificity_fixed:
        return sens, 1.0
    spec = float(np.mean(1.0 - observed_mediator_prob(params, dataset, 2)))
    return sens, spec


def log_true_mediator_prob(params, dataset):
    """(log P(M=1|...), log P(M=2|...)) per subject."""
    lp = dataset.design_mediator @ params.beta
    log_p1 = log_expit(lp)
    # log sigma(-t) = log sigma(t) - t, exactly; saves the second pass.
    return log_p1, log_p1 - lp


def log_observation_prob(params, dataset, latent_class):
    """log P(M*_i | M=latent_class, Z_i) per subject, at the observed M*_i."""
    if latent_class == 2 and params.specificity_fixed:
        out = np.zeros(dataset.n)
        out[dataset.m_star == 1] = -np.inf
        return out
    lp = dataset.design_observation @ params.gamma[latent_class - 1]
    sign = 2.0 * dataset.mstar_indicator - 1.0
    return log_expit(sign * lp)


def outcome_linpred(params, dataset, m_indicator):
    """Linear predictor of the outcome model at a mediator indicator (0 or 1)."""
    m = np.broadcast_to(np.asarray(m_indicator, dtype=float), (dataset.n,))
    p = dataset.n_confounders
    eta = (
        params.theta[0]
        + params.theta[1] * dataset.x
        + dataset.c @ params.theta[2 : 2 + p]
        + params.theta_m * m
    )
    if params.interaction:
        eta = eta + params.theta_xm * dataset.x * m
    return eta


def outcome_logdensity(params, dataset, latent_class, family):
    """log f(y_i | x_i, c_i, M=latent_class) under the outcome family."""
    if latent_class not in (1, 2):
        raise ConfigurationError("latent_class must be 1 or 2")
    m = 1.0 if latent_class == 1 else 0.0
    eta = outcome_linpred(params, dataset, m)
    if family.name == "normal" and params.sigma2 is None:
        raise ConfigurationError("normal outcome requires sigma2")
    scale = params.sigma2 if family.name == "normal" else None
    return family.unit_loglik(dataset.y, eta, scale)


def outcome_density(params, dataset, latent_class, family):
    """f(y_i | x_i, c_i, M=latent_class); strictly positive."""
    return np.exp(outcome_logdensity(params, dataset, latent_class, family))


def joint_log_components(params, dataset, family):
    """Per-subject log of pi_j * P(M*|M=j,Z) * f(y|M=j) for j = 1, 2."""
    log_p1, log_p2 = log_true_mediator_prob(params, dataset)
    comp1 = log_p1 + log_observation_prob(params, dataset, 1)
    comp2 = log_p2 + log_observation_prob(params, dataset, 2)
    comp1 = comp1 + outcome_logdensity(params, dataset, 1, family)
    comp2 = comp2 + outcome_logdensity(params, dataset, 2, family)
    return comp1, comp2


def observed_data_loglik(params, dataset, family):
    """Marginal log-likelihood of (M*, Y) with the true mediator summed out."""
    comp1, comp2 = joint_log_components(params, dataset, family)
    per_subject = np.logaddexp(comp1, comp2)
    value = float(np.sum(per_subject))
    if not np.isfinite(value):
        raise EvaluationError("observed-data log-likelihood is non-finite")
    return value


def fit_naive(dataset, family, interaction=False):
    """Fit the analysis model that plugs M* in for the true mediator.

    Returns the logistic fit of 1{M*=1} on (1, X, C) and the outcome-family
    fit of Y on (1, X, C, 1{M*=1}) plus the interaction column when requested.
    """
    beta_fit = glm.fit_weighted_glm(
        dataset.design_mediator,
        dataset.mstar_indicator,
        np.ones(dataset.n),
        glm.BERNOULLI,
        column_names=dataset.mediator_column_names(),
    )
    design = dataset.outcome_design(dataset.mstar_indicator, interaction)
    theta_fit = glm.fit_weighted_glm(
        design,
        dataset.y,
        np.ones(dataset.n),
        family,
        column_names=dataset.outcome_column_names(interaction),
    )
    return NaiveFit(
        beta_star=beta_fit.coefficients,
        theta_star=theta_fit.coefficients,
        sigma2_star=theta_fit.sigma2,
        interaction=interaction,
        converged=beta_fit.converged and theta_fit.converged,
    )


def swap_labels(params):
    """Exchange the latent class labels, preserving the marginal likelihood.

    Swapping relabels gamma's rows, negates every beta coefficient, and
    remaps the outcome coefficients so that the reference class flips:
    theta0 absorbs theta_m, theta_x absorbs theta_xm, and both mediator
    terms change sign. sigma2 is untouched.
    """
    if params.specificity_fixed:
        raise ConfigurationError("label swap is undefined with fixed specificity")
    theta = params.theta.copy()
    if params.interaction:
        theta[0] += theta[-2]
        theta[1] += theta[-1]
        theta[-2] = -theta[-2]
        theta[-1] = -theta[-1]
    else:
        theta[0] += theta[-1]
        theta[-1] = -theta[-1]
    return ParameterSet(
        beta=-params.beta,
        gamma=params.gamma[::-1].copy(),
        theta=theta,
        sigma2=params.sigma2,
        interaction=params.interaction,
        specificity_fixed=False,
    )
