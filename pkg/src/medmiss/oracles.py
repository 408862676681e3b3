"""Independent verification oracles for the test suite and self-check mode.

Each oracle re-derives a quantity the main modules compute, through a
deliberately different route: posterior class probabilities by direct
(non-log) enumeration, GLM coefficients by straight Newton iterations on the
analytic score and Hessian, and causal effects by simulating potential
outcomes. None of them call into the engines they check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, EvaluationError
from .model import Responsibilities
from .effects import EffectEstimates

BRUTE_FORCE_LIMIT = 1000


def _logistic(v):
    return 1.0 / (1.0 + np.exp(-v))


def brute_force_posterior(params, dataset, family):
    """Posterior latent-class probabilities by plain per-subject enumeration.

    Multiplies raw probabilities and densities with ordinary arithmetic; any
    subject whose total mass underflows to zero raises instead of being
    papered over. Intended for small fixtures only.
    """
    n = dataset.n
    if n > BRUTE_FORCE_LIMIT:
        raise ConfigurationError("brute-force oracle is limited to 1000 subjects")
    pi1 = _logistic(dataset.design_mediator @ params.beta)
    s1 = _logistic(dataset.design_observation @ params.gamma[0])
    if params.specificity_fixed:
        s2 = np.zeros(n)
    else:
        s2 = _logistic(dataset.design_observation @ params.gamma[1])
    is_pos = dataset.m_star == 1
    obs1 = np.where(is_pos, s1, 1.0 - s1)
    obs2 = np.where(is_pos, s2, 1.0 - s2)
    r = np.zeros((n, 2))
    for i in range(n):
        dens = [None, None]
        for j, m_ind in ((0, 1.0), (1, 0.0)):
            eta = (
                params.theta[0]
                + params.theta[1] * dataset.x[i]
                + float(dataset.c[i] @ params.theta[2 : 2 + dataset.n_confounders])
                + params.theta_m * m_ind
                + params.theta_xm * dataset.x[i] * m_ind
            )
            y = dataset.y[i]
            if family.name == "normal":
                dens[j] = math.exp(-((y - eta) ** 2) / (2.0 * params.sigma2)) / math.sqrt(
                    2.0 * math.pi * params.sigma2
                )
            elif family.name == "bernoulli":
                p = 1.0 / (1.0 + math.exp(-eta))
                dens[j] = p if y == 1 else 1.0 - p
            else:
                rate = math.exp(eta)
                dens[j] = rate ** y * math.exp(-rate) / math.factorial(int(y))
        joint1 = pi1[i] * obs1[i] * dens[0]
        joint2 = (1.0 - pi1[i]) * obs2[i] * dens[1]
        total = joint1 + joint2
        if total == 0.0:
            raise EvaluationError(
                "brute-force posterior underflowed for subject %d" % i
            )
        r[i, 0] = joint1 / total
        r[i, 1] = joint2 / total
    return Responsibilities(r)


def independent_newton_glm(design, response, weights, family,
                           max_iterations=100, tol=1e-11):
    """Weighted GLM coefficients by undamped Newton-Raphson.

    Uses the analytic score X'(w (y - mu)) and expected information
    X' diag(w v) X directly; the Normal family is solved by QR least squares
    on the square-root-weighted system. Divergence raises rather than
    returning a flag.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if family.name == "normal":
        sw = np.sqrt(weights)
        coef, *_ = np.linalg.lstsq(design * sw[:, None], response * sw, rcond=None)
        return coef
    coef = np.zeros(design.shape[1])
    for _ in range(max_iterations):
        eta = design @ coef
        if not np.all(np.isfinite(eta)) or np.any(eta > 700):
            raise EvaluationError("newton oracle diverged")
        if family.name == "bernoulli":
            mu = 1.0 / (1.0 + np.exp(-eta))
            v = mu * (1.0 - mu)
        else:
            mu = np.exp(eta)
            v = mu
        score = design.T @ (weights * (response - mu))
        info = (design * (weights * v)[:, None]).T @ design
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise EvaluationError("newton oracle information matrix is singular")
        coef = coef + step
        if float(np.max(np.abs(score))) < tol and float(np.max(np.abs(step))) < 1e-9:
            return coef
    raise EvaluationError("newton oracle did not converge")


@dataclass
class MonteCarloEffects:
    """Simulated effects with self-reported uncertainty.

    Standard errors are on the comparison scale: plain differences for the
    difference scale, log-ratio for the ratio scales. ``consistent_with``
    checks a closed-form EffectEstimates against these within k standard
    errors, componentwise.
    """

    estimates: EffectEstimates
    se_cde: float
    se_nde: float
    se_nie: float

    def consistent_with(self, other, k=3.0):
        pairs = (
            (other.cde, self.estimates.cde, self.se_cde),
            (other.nde, self.estimates.nde, self.se_nde),
            (other.nie, self.estimates.nie, self.se_nie),
        )
        for formula, simulated, se in pairs:
            if self.estimates.scale == "difference":
                gap = abs(formula - simulated)
            else:
                gap = abs(math.log(formula) - math.log(simulated))
            if gap > k * se:
                return False
        return True


def _draw_outcome(rng, params, family, x_value, m_indicator, c):
    eta = (
        params.theta[0]
        + params.theta[1] * x_value
        + float(params.theta[2 : 2 + c.shape[0]] @ c)
        + params.theta_m * m_indicator
        + params.theta_xm * x_value * m_indicator
    )
    if family.name == "normal":
        return eta + math.sqrt(params.sigma2) * rng.standard_normal(m_indicator.shape)
    if family.name == "bernoulli":
        return (rng.random(m_indicator.shape) < _logistic(eta)).astype(float)
    return rng.poisson(np.exp(eta)).astype(float)


def _arm(rng, params, family, query, x_value, mediator, draws):
    """Simulate one arm: mediator is drawn at an exposure level or held fixed."""
    if mediator in ("draw_x", "draw_ref"):
        at = query.x if mediator == "draw_x" else query.x_ref
        p = _logistic(params.beta[0] + params.beta[1] * at
                      + float(params.beta[2:] @ query.c))
        m = (rng.random(draws) < p).astype(float)
    else:
        m = np.full(draws, float(mediator))
    y = _draw_outcome(rng, params, family, x_value, m, query.c)
    return float(np.mean(y)), float(np.var(y))


def _contrast(scale, stat_a, stat_b, draws):
    mean_a, var_a = stat_a
    mean_b, var_b = stat_b
    if scale == "difference":
        se = math.sqrt(var_a / draws + var_b / draws)
        return mean_a - mean_b, se
    if scale == "odds-ratio":
        odds_a = mean_a / (1.0 - mean_a)
        odds_b = mean_b / (1.0 - mean_b)
        se = math.sqrt(
            1.0 / (draws * mean_a * (1.0 - mean_a))
            + 1.0 / (draws * mean_b * (1.0 - mean_b))
        )
        return odds_a / odds_b, se
    se = math.sqrt(
        var_a / (draws * mean_a ** 2) + var_b / (draws * mean_b ** 2)
    )
    return mean_a / mean_b, se


def monte_carlo_effects(params, query, family, draws=10 ** 6, seed=0):
    """Potential-outcome simulation of CDE, NDE, and NIE at a query point.

    Mediators are drawn from the true-mediator model at the relevant exposure,
    outcomes from the outcome model; every arm uses fresh draws so the two
    sides of each contrast are independent. Requires draws >= 10**5 so the
    reported standard errors are trustworthy.
    """
    if draws < 10 ** 5:
        raise ConfigurationError("monte_carlo_effects needs at least 1e5 draws")
    rng = np.random.Generator(np.random.Philox(seed))
    m_level = float(query.m)
    cde_a = _arm(rng, params, family, query, query.x, m_level, draws)
    cde_b = _arm(rng, params, family, query, query.x_ref, m_level, draws)
    nde_a = _arm(rng, params, family, query, query.x, "draw_ref", draws)
    nde_b = _arm(rng, params, family, query, query.x_ref, "draw_ref", draws)
    nie_a = _arm(rng, params, family, query, query.x, "draw_x", draws)
    nie_b = _arm(rng, params, family, query, query.x, "draw_ref", draws)
    cde, se_cde = _contrast(query.scale, cde_a, cde_b, draws)
    nde, se_nde = _contrast(query.scale, nde_a, nde_b, draws)
    nie, se_nie = _contrast(query.scale, nie_a, nie_b, draws)
    return MonteCarloEffects(
        EffectEstimates(cde, nde, nie, query.scale), se_cde, se_nde, se_nie
    )
