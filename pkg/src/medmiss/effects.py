"""Controlled, natural direct, and natural indirect effects from fitted models.

Three scales are supported. The difference scale applies to identity-link
(Normal) outcome fits. The odds-ratio scale applies to logit-link fits and is
a rare-outcome approximation. The risk-ratio scale applies to log-link
(Poisson) fits; its expressions coincide with the odds-ratio ones and are
exact for the log link (marginalizing the mediator out of exp(linear
predictor) produces precisely the (1 + e^(a+l)) / (1 + e^l) factors).

Effects are evaluated at a query point: exposure change from x_ref to x,
conditioning confounder values c, and a controlled mediator level m in
{0, 1} (indicator coding, 1 meaning mediator class 1 present).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError

SCALES = ("difference", "odds-ratio", "risk-ratio")


@dataclass
class EffectQuery:
    """Evaluation point for the effect formulas."""

    x: float
    x_ref: float
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m: int = 0
    scale: str = "difference"

    def __post_init__(self):
        self.x = float(self.x)
        self.x_ref = float(self.x_ref)
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.m not in (0, 1):
            raise ConfigurationError("controlled mediator level m must be 0 or 1")
        if self.scale not in SCALES:
            raise ConfigurationError("scale must be one of %s" % (SCALES,))


@dataclass
class EffectEstimates:
    """CDE, NDE, and NIE on one scale."""

    cde: float
    nde: float
    nie: float
    scale: str


def _mediator_linpred(params, query, x_value):
    c = query.c
    expected = params.beta.shape[0] - 2
    if c.shape[0] != expected:
        raise ConfigurationError(
            "query has %d confounder values, model has %d" % (c.shape[0], expected)
        )
    return float(params.beta[0] + params.beta[1] * x_value + params.beta[2:] @ c)


def effects_difference(params, query):
    """Difference-scale effects for an identity-link outcome fit.

    CDE = (theta_x + theta_xm m)(x - x_ref);
    NDE adds the interaction weighted by the reference-exposure mediator
    probability; NIE scales the mediator coefficient by the change in that
    probability.
    """
    dx = query.x - query.x_ref
    theta_x = params.theta_x
    theta_m = params.theta_m
    theta_xm = params.theta_xm
    p_ref = expit(_mediator_linpred(params, query, query.x_ref))
    p_x = expit(_mediator_linpred(params, query, query.x))
    cde = (theta_x + theta_xm * query.m) * dx
    nde = theta_x * dx + theta_xm * dx * p_ref
    nie = (theta_m + theta_xm * query.x) * (p_x - p_ref)
    return EffectEstimates(float(cde), float(nde), float(nie), "difference")


def _log1pexp(a):
    return float(np.logaddexp(0.0, a))


def _effects_ratio(params, query, scale):
    dx = query.x - query.x_ref
    theta_x = params.theta_x
    theta_m = params.theta_m
    theta_xm = params.theta_xm
    lb_x = _mediator_linpred(params, query, query.x)
    lb_ref = _mediator_linpred(params, query, query.x_ref)
    log_cde = (theta_x + theta_xm * query.m) * dx
    log_nde = (
        theta_x * dx
        + _log1pexp(theta_m + theta_xm * query.x + lb_ref)
        - _log1pexp(theta_m + theta_xm * query.x_ref + lb_ref)
    )
    log_nie = (
        _log1pexp(lb_ref)
        + _log1pexp(theta_m + theta_xm * query.x + lb_x)
        - _log1pexp(lb_x)
        - _log1pexp(theta_m + theta_xm * query.x + lb_ref)
    )
    return EffectEstimates(
        float(np.exp(log_cde)), float(np.exp(log_nde)), float(np.exp(log_nie)), scale
    )


def effects_odds_ratio(params, query):
    """Odds-ratio effects for a logit-link outcome fit (rare-outcome form)."""
    return _effects_ratio(params, query, "odds-ratio")


def effects_risk_ratio(params, query):
    """Risk-ratio effects for a log-link outcome fit (exact for the log link)."""
    return _effects_ratio(params, query, "risk-ratio")


def compute_effects(params, query):
    """Dispatch on the query's scale."""
    if query.scale == "difference":
        return effects_difference(params, query)
    if query.scale == "odds-ratio":
        return effects_odds_ratio(params, query)
    return effects_risk_ratio(params, query)
