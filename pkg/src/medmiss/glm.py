"""Weighted generalized linear model fitting.

Three outcome families are supported: Normal with identity link, Bernoulli
with logit link, and Poisson with log link. Fits maximize the weighted
log-likelihood sum_i w_i log f(y_i | eta_i). The Normal family is solved in
closed form (weighted least squares with the residual variance profiled out);
the other two use iteratively reweighted least squares with step-halving.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammaln, log_expit, expit

from .exceptions import (
    ConfigurationError,
    EvaluationError,
    RankDeficiencyError,
    SeparationWarning,
)

MAX_ITERATIONS = 100
COEF_TOLERANCE = 1e-8
LOGLIK_RELATIVE_TOLERANCE = 1e-10
SEPARATION_BOUND = 30.0


class Family:
    """One exponential-family outcome distribution with its canonical link."""

    name = ""

    def mean(self, eta):
        raise NotImplementedError

    def unit_loglik(self, y, eta, scale=None):
        """Per-row log density/mass at linear predictor eta."""
        raise NotImplementedError


class NormalFamily(Family):
    name = "normal"

    def mean(self, eta):
        return eta

    def unit_loglik(self, y, eta, scale=None):
        if scale is None:
            raise ConfigurationError("normal family requires a residual variance")
        if scale <= 0 or not np.isfinite(scale):
            raise ConfigurationError("residual variance must be finite and positive")
        resid = y - eta
        # Extreme candidate points may overflow to -inf; callers treat that
        # as an evaluation to reject, so the overflow is not an error.
        with np.errstate(over="ignore"):
            return -0.5 * np.log(2.0 * np.pi * scale) - resid * resid / (2.0 * scale)


class BernoulliFamily(Family):
    name = "bernoulli"

    def mean(self, eta):
        return expit(eta)

    def unit_loglik(self, y, eta, scale=None):
        # log_expit((2y-1) eta) equals the usual two-branch form exactly for
        # y in {0, 1} and costs a single special-function pass.
        return log_expit((2.0 * y - 1.0) * eta)


class PoissonFamily(Family):
    name = "poisson"

    def mean(self, eta):
        return np.exp(eta)

    def unit_loglik(self, y, eta, scale=None):
        # Large eta overflows to -inf, which callers reject as a candidate.
        with np.errstate(over="ignore"):
            return y * eta - np.exp(eta) - gammaln(y + 1.0)


NORMAL = NormalFamily()
BERNOULLI = BernoulliFamily()
POISSON = PoissonFamily()
_FAMILIES = {f.name: f for f in (NORMAL, BERNOULLI, POISSON)}


def family_by_name(name):
    try:
        return _FAMILIES[name.lower()]
    except KeyError:
        raise ConfigurationError(
            "unknown family %r; expected one of %s" % (name, sorted(_FAMILIES))
        ) from None


@dataclass
class GlmFit:
    """Result of one weighted fit.

    coefficients align with the design columns; sigma2 is the profiled
    residual variance (Normal family only, None otherwise); separation is
    True when a logit fit drifted past the divergence bound.
    """

    coefficients: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    sigma2: float | None = None
    separation: bool = False


def _column_names(design, names):
    if names is None:
        return ["x%d" % j for j in range(design.shape[1])]
    if len(names) != design.shape[1]:
        raise ConfigurationError("column name count does not match design width")
    return list(names)


def _check_rank(design_scaled, names):
    """Raise RankDeficiencyError naming aliased columns if rank deficient."""
    n, p = design_scaled.shape
    if n < p:
        raise ConfigurationError("fewer rows than design columns")
    _, r, pivot = scipy.linalg.qr(design_scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(n, p) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < p:
        offending = [names[j] for j in sorted(pivot[rank:])]
        raise RankDeficiencyError(offending)


def _validate(design, response, weights, family):
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if design.ndim != 2:
        raise ConfigurationError("design must be a 2-d array")
    n = design.shape[0]
    if response.shape != (n,) or weights.shape != (n,):
        raise ConfigurationError("response and weights must match the design rows")
    if not np.all(np.isfinite(design)):
        raise ConfigurationError("design contains non-finite entries")
    if not np.all(np.isfinite(response)):
        raise ConfigurationError("response contains non-finite entries")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ConfigurationError("weights must be finite and nonnegative")
    if not np.any(weights > 0):
        raise ConfigurationError("at least one weight must be positive")
    if not np.allclose(design[:, 0], 1.0):
        raise ConfigurationError("first design column must be the intercept (all ones)")
    if family.name == "bernoulli" and not np.all((response == 0) | (response == 1)):
        raise ConfigurationError("bernoulli responses must be 0 or 1")
    if family.name == "poisson":
        if np.any(response < 0) or np.any(response != np.floor(response)):
            raise ConfigurationError("poisson responses must be nonnegative integers")
    return design, response, weights


def log_likelihood(design, response, weights, family, coefficients, sigma2=None):
    """Weighted log-likelihood sum_i w_i log f(y_i | eta_i) at given coefficients."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    weights = np.asarray(weights, dtype=float)
    eta = design @ np.asarray(coefficients, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise EvaluationError("non-finite linear predictor in likelihood evaluation")
    value = float(np.sum(weights * family.unit_loglik(response, eta, sigma2)))
    if not np.isfinite(value):
        raise EvaluationError("log-likelihood evaluated to a non-finite value")
    return value


def _fit_normal(design, response, weights, names, check_rank=True):
    if check_rank:
        _check_rank(design * np.sqrt(weights)[:, None], names)
    gram = (design * weights[:, None]).T @ design
    rhs = design.T @ (weights * response)
    coef = np.linalg.solve(gram, rhs)
    resid = response - design @ coef
    wsum = float(np.sum(weights))
    sigma2 = float(np.sum(weights * resid * resid) / wsum)
    sigma2 = max(sigma2, 1e-300)
    ll = log_likelihood(design, response, weights, NORMAL, coef, sigma2)
    return GlmFit(coef, ll, 1, True, sigma2=sigma2)


def _irls(design, response, weights, family, names, start, check_rank=True):
    n, p = design.shape
    if check_rank:
        _check_rank(design * np.sqrt(weights)[:, None], names)
    coef = np.zeros(p) if start is None else np.asarray(start, dtype=float).copy()
    bernoulli = family.name == "bernoulli"
    # Per-fit evaluator: the response-dependent pieces are fixed within one
    # fit, so hoist them out of the step-halving loop. Returns -inf (rather
    # than raising) on a non-finite predictor so halving can recover.
    if bernoulli:
        sgn = 2.0 * response - 1.0

        def evaluate(c):
            eta = design @ c
            if not np.all(np.isfinite(eta)):
                return -np.inf, eta
            return float(weights @ log_expit(sgn * eta)), eta
    else:
        const = float(weights @ gammaln(response + 1.0))
        wy = weights * response

        def evaluate(c):
            eta = design @ c
            if not np.all(np.isfinite(eta)):
                return -np.inf, eta
            with np.errstate(over="ignore"):
                total = float(wy @ eta - weights @ np.exp(eta)) - const
            return (total if np.isfinite(total) else -np.inf), eta
    ll, eta = evaluate(coef)
    if not np.isfinite(ll):
        raise EvaluationError("log-likelihood evaluated to a non-finite value")
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        mu = family.mean(eta)
        if bernoulli:
            work = mu * (1.0 - mu)
        else:
            work = mu
        work = np.maximum(work, 1e-10)
        z = eta + (response - mu) / work
        ww = weights * work
        gram = (design * ww[:, None]).T @ design
        rhs = design.T @ (ww * z)
        try:
            new_coef = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            _check_rank(design * np.sqrt(ww)[:, None], names)
            raise RankDeficiencyError(names)
        step = new_coef - coef
        # Step-halving keeps the likelihood from decreasing.
        new_ll = None
        for _ in range(40):
            candidate = coef + step
            new_ll, new_eta = evaluate(candidate)
            if np.isfinite(new_ll) and new_ll >= ll - 1e-12:
                break
            step = step / 2.0
        if new_ll is None or not np.isfinite(new_ll):
            break
        delta_coef = float(np.max(np.abs(candidate - coef)))
        delta_ll = abs(new_ll - ll)
        coef = candidate
        ll = new_ll
        eta = new_eta
        if delta_coef < COEF_TOLERANCE or delta_ll <= LOGLIK_RELATIVE_TOLERANCE * (
            abs(ll) + 1.0
        ):
            converged = True
            break
    separation = False
    if family.name == "bernoulli" and float(np.max(np.abs(coef))) > SEPARATION_BOUND:
        separation = True
        warnings.warn(
            "possible separation: a logit coefficient exceeds %g" % SEPARATION_BOUND,
            SeparationWarning,
            stacklevel=3,
        )
    return GlmFit(coef, ll, iterations, converged, separation=separation)


def fit_weighted_glm(design, response, weights, family, column_names=None, start=None,
                     assume_valid=False):
    """Maximize the weighted log-likelihood for one family.

    Parameters
    ----------
    design : (n, p) array with an all-ones first column.
    response : (n,) array; {0,1} for bernoulli, nonnegative integers for poisson.
    weights : (n,) nonnegative array, at least one positive. Rows with zero
        weight do not influence the fit at all.
    family : one of NORMAL, BERNOULLI, POISSON.
    column_names : optional names used in rank-deficiency messages.
    start : optional warm-start coefficient vector (ignored by the Normal
        family, which is solved in closed form).
    assume_valid : skip input validation, zero-weight filtering, and the
        pre-fit rank check. Only for repeat fits on a design an earlier call
        already validated, with weights known finite and strictly positive;
        iterative reweighting schemes refit the same design many times and
        the checks dominate their cost.

    Returns
    -------
    GlmFit with coefficients, the achieved log-likelihood, iteration count,
    convergence flag, and the profiled residual variance for the Normal family.
    """
    if assume_valid:
        design = np.asarray(design, dtype=float)
        response = np.asarray(response, dtype=float)
        weights = np.asarray(weights, dtype=float)
        names = _column_names(design, column_names)
        if family.name == "normal":
            return _fit_normal(design, response, weights, names, check_rank=False)
        return _irls(design, response, weights, family, names, start,
                     check_rank=False)
    design, response, weights = _validate(design, response, weights, family)
    names = _column_names(design, column_names)
    keep = weights > 0
    if not np.all(keep):
        design, response, weights = design[keep], response[keep], weights[keep]
    if family.name == "normal":
        return _fit_normal(design, response, weights, names)
    return _irls(design, response, weights, family, names, start)
