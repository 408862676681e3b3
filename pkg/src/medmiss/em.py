"""Joint EM estimation of the mediator, observation, and outcome models.

The E-step computes per-subject posterior probabilities of the latent
mediator classes; the M-step maximizes the expected complete-data
log-likelihood through three weighted GLM fits (true-mediator logistic on a
duplicated-row design, one observation logistic per latent class, outcome
family fit on the class-duplicated design). A SQUAREM-style extrapolation
accelerates the fixed-point iteration, falling back to the plain step
whenever extrapolation would reduce the observed-data log-likelihood.

A constraint mode for known-perfect specificity (no false positives) is
available for data where every observed class-1 mediator is genuine; the
false-positive model is then pinned at the boundary instead of estimated.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import (
    ConfigurationError,
    DegenerateSubjectError,
    EvaluationError,
    MedmissError,
    SeparationWarning,
    UnidentifiableFitError,
)
from . import glm
from .model import (
    ParameterSet,
    Responsibilities,
    average_sens_spec,
    fit_naive,
    joint_log_components,
    log_observation_prob,
    log_true_mediator_prob,
    swap_labels,
)

RESPONSIBILITY_CLAMP = 1e-12
MONOTONICITY_SLACK = 1e-10


def _warn_if_near_separation(params, family):
    """One end-of-run warning when the final logit fits sit near a boundary."""
    worst = float(np.max(np.abs(params.beta)))
    finite = np.isfinite(params.gamma)
    if np.any(finite):
        worst = max(worst, float(np.max(np.abs(params.gamma[finite]))))
    if family is not None and family.name == "bernoulli":
        worst = max(worst, float(np.max(np.abs(params.theta))))
    if worst > glm.SEPARATION_BOUND:
        warnings.warn(
            "a fitted logit coefficient exceeds %g; the estimate sits near a "
            "separation boundary and the flat likelihood direction may leave "
            "it data-dependent" % glm.SEPARATION_BOUND,
            SeparationWarning,
            stacklevel=3,
        )


@dataclass
class EmConfig:
    """Convergence and initialization controls.

    loglik_tolerance : stop when the absolute successive log-likelihood
        difference falls below this.
    max_iterations : cap on EM map evaluations (an accelerated cycle spends
        three).
    acceleration : "squarem" or "none".
    start : optional explicit ParameterSet start.
    init_strategy : "naive" (analysis-model fit plus moderate sensitivity /
        specificity intercepts) or "perturb" (naive start jittered with seed).
    seed : RNG seed for the perturb strategy.
    fix_specificity : pin P(M*=1 | M=2) = 0 instead of estimating it.
    """

    loglik_tolerance: float = 1e-7
    max_iterations: int = 1500
    acceleration: str = "squarem"
    start: ParameterSet | None = None
    init_strategy: str = "naive"
    seed: int | None = None
    fix_specificity: bool = False

    def __post_init__(self):
        if self.loglik_tolerance <= 0:
            raise ConfigurationError("loglik_tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if self.acceleration not in ("squarem", "none"):
            raise ConfigurationError("acceleration must be 'squarem' or 'none'")
        if self.init_strategy not in ("naive", "perturb"):
            raise ConfigurationError("init_strategy must be 'naive' or 'perturb'")


@dataclass
class FitReport:
    """Outcome of one estimation run, shared by every method."""

    method: str
    params: ParameterSet
    loglik_trace: list
    iterations: int
    converged: bool
    avg_sensitivity: float
    avg_specificity: float
    label_swap_applied: bool = False
    metadata: dict = field(default_factory=dict)


def _fixed_gamma_row2(q):
    row = np.zeros(1 + q)
    row[0] = -np.inf
    return row


def initialize(dataset, family, interaction=False, strategy="naive", seed=None,
               fix_specificity=False):
    """Build a starting ParameterSet.

    The default fits the analysis model (M* treated as true) and sets the
    observation models to moderate accuracy: sensitivity intercept +2,
    false-positive intercept -2, zero slopes. "perturb" jitters that start
    with Normal(0, 0.25) noise from the given seed.
    """
    naive = fit_naive(dataset, family, interaction)
    q = dataset.n_misclass_covariates
    gamma = np.zeros((2, 1 + q))
    gamma[0, 0] = 2.0
    gamma[1, 0] = -2.0
    params = ParameterSet(
        beta=naive.beta_star.copy(),
        gamma=gamma,
        theta=naive.theta_star.copy(),
        sigma2=naive.sigma2_star,
        interaction=interaction,
        specificity_fixed=fix_specificity,
    )
    if fix_specificity:
        gamma = gamma.copy()
        gamma[1] = _fixed_gamma_row2(q)
        params = ParameterSet(
            beta=params.beta, gamma=gamma, theta=params.theta,
            sigma2=params.sigma2, interaction=interaction, specificity_fixed=True,
        )
    if strategy == "perturb":
        rng = np.random.default_rng(seed)
        beta = params.beta + rng.normal(0.0, 0.25, params.beta.shape)
        gamma = params.gamma.copy()
        if fix_specificity:
            gamma[0] += rng.normal(0.0, 0.25, gamma[0].shape)
        else:
            gamma += rng.normal(0.0, 0.25, gamma.shape)
        theta = params.theta + rng.normal(0.0, 0.25, params.theta.shape)
        params = ParameterSet(
            beta=beta, gamma=gamma, theta=theta, sigma2=params.sigma2,
            interaction=interaction, specificity_fixed=fix_specificity,
        )
    return params


def e_step(params, dataset, family):
    """Posterior P(M=j | M*, X, C, Z, Y) per subject under current parameters."""
    comp1, comp2 = joint_log_components(params, dataset, family)
    degenerate = np.isneginf(comp1) & np.isneginf(comp2)
    if np.any(degenerate):
        raise DegenerateSubjectError(int(np.argmax(degenerate)))
    r1 = expit(comp1 - comp2)
    return Responsibilities(np.column_stack([r1, 1.0 - r1]))


def _clamped(resp):
    r = np.clip(resp.r, RESPONSIBILITY_CLAMP, 1.0 - RESPONSIBILITY_CLAMP)
    return r / r.sum(axis=1, keepdims=True)


class _Workspace:
    """Cached duplicated designs reused across M-steps of one run.

    The designs never change between M-steps and the clamped responsibilities
    keep every weight strictly positive, so after the first full fit the
    remaining refits can skip input validation and the rank check.
    """

    def __init__(self, dataset, interaction):
        self.dataset = dataset
        self.interaction = interaction
        self.validated = False
        n = dataset.n
        self.mediator_design2 = np.vstack([dataset.design_mediator] * 2)
        self.mediator_response2 = np.concatenate([np.ones(n), np.zeros(n)])
        w1 = dataset.outcome_design(1.0, interaction)
        w0 = dataset.outcome_design(0.0, interaction)
        self.outcome_design2 = np.vstack([w1, w0])
        self.outcome_response2 = np.concatenate([dataset.y, dataset.y])


def _m_step(r, workspace, family, fix_specificity, warm):
    dataset = workspace.dataset
    interaction = workspace.interaction
    q = dataset.n_misclass_covariates
    fast = workspace.validated
    w2 = np.concatenate([r[:, 0], r[:, 1]])
    with warnings.catch_warnings():
        # Transient near-boundary fits are routine mid-run; a single summary
        # warning is emitted after the run if the final fit stays there.
        warnings.simplefilter("ignore", SeparationWarning)
        beta_fit = glm.fit_weighted_glm(
            workspace.mediator_design2,
            workspace.mediator_response2,
            w2,
            glm.BERNOULLI,
            column_names=dataset.mediator_column_names(),
            start=None if warm is None else warm.beta,
            assume_valid=fast,
        )
        gamma = np.zeros((2, 1 + q))
        gamma_fit1 = glm.fit_weighted_glm(
            dataset.design_observation,
            dataset.mstar_indicator,
            r[:, 0],
            glm.BERNOULLI,
            column_names=dataset.observation_column_names(),
            start=None if warm is None else warm.gamma[0],
            assume_valid=fast,
        )
        gamma[0] = gamma_fit1.coefficients
        if fix_specificity:
            gamma[1] = _fixed_gamma_row2(q)
        else:
            gamma_fit2 = glm.fit_weighted_glm(
                dataset.design_observation,
                dataset.mstar_indicator,
                r[:, 1],
                glm.BERNOULLI,
                column_names=dataset.observation_column_names(),
                start=None if warm is None else warm.gamma[1],
                assume_valid=fast,
            )
            gamma[1] = gamma_fit2.coefficients
        theta_fit = glm.fit_weighted_glm(
            workspace.outcome_design2,
            workspace.outcome_response2,
            w2,
            family,
            column_names=dataset.outcome_column_names(interaction),
            start=None if warm is None else warm.theta,
            assume_valid=fast,
        )
    workspace.validated = True
    return ParameterSet(
        beta=beta_fit.coefficients,
        gamma=gamma,
        theta=theta_fit.coefficients,
        sigma2=theta_fit.sigma2,
        interaction=interaction,
        specificity_fixed=fix_specificity,
    )


def m_step(responsibilities, dataset, family, interaction=False,
           fix_specificity=False, warm=None):
    """Maximize the expected complete-data log-likelihood given responsibilities.

    Responsibilities are clamped away from {0, 1} before weighting so that
    near-degenerate posteriors cannot produce zero-weight rank pathologies.
    """
    workspace = _Workspace(dataset, interaction)
    return _m_step(_clamped(responsibilities), workspace, family,
                   fix_specificity, warm)


def correct_label_switching(params, dataset):
    """Return the parameterization with average sensitivity + specificity > 1.

    The two latent-class labelings are likelihood-equivalent; the identifying
    convention keeps the one where classification is better than chance. An
    exact tie cannot be resolved and raises.
    """
    sens, spec = average_sens_spec(params, dataset)
    total = sens + spec
    if params.specificity_fixed:
        return params
    if total == 1.0:
        raise UnidentifiableFitError(
            "average sensitivity + specificity equals 1 exactly; latent class "
            "labels cannot be determined"
        )
    if total < 1.0:
        return swap_labels(params)
    return params


def _pack(params, family):
    parts = [params.beta, params.gamma[0]]
    if not params.specificity_fixed:
        parts.append(params.gamma[1])
    parts.append(params.theta)
    if family.name == "normal":
        parts.append(np.array([np.log(params.sigma2)]))
    return np.concatenate(parts)


def _unpack(vector, template, family):
    nb = template.beta.shape[0]
    ng = template.gamma.shape[1]
    beta = vector[:nb]
    pos = nb
    gamma = np.zeros_like(template.gamma)
    gamma[0] = vector[pos : pos + ng]
    pos += ng
    if template.specificity_fixed:
        gamma[1] = _fixed_gamma_row2(ng - 1)
    else:
        gamma[1] = vector[pos : pos + ng]
        pos += ng
    nt = template.theta.shape[0]
    theta = vector[pos : pos + nt]
    pos += nt
    sigma2 = float(np.exp(vector[pos])) if family.name == "normal" else None
    return ParameterSet(
        beta=beta, gamma=gamma, theta=theta, sigma2=sigma2,
        interaction=template.interaction,
        specificity_fixed=template.specificity_fixed,
    )


MAX_BACKTRACKS = 4
# A cycle gain below this multiple of the tolerance marks a stalled run,
# where the map contracts so slowly that consecutive iterates mix decay
# modes and the within-cycle extrapolation underperforms.
STALL_FACTOR = 1e4


def _squarem_alpha(v0, v1, v2):
    """S3 step length from three consecutive iterates (None if degenerate)."""
    r = v1 - v0
    v = (v2 - v1) - r
    rr = float(r @ r)
    vv = float(v @ v)
    if vv <= 0 or rr <= 0:
        return None
    alpha = -np.sqrt(rr / vv)
    if alpha > -1.0:
        alpha = -1.0
    return alpha


def _squarem_candidate(v0, v1, v2, alpha=None):
    """Extrapolated iterate for a given (or the S3) step length."""
    if alpha is None:
        alpha = _squarem_alpha(v0, v1, v2)
    if alpha is None:
        return None
    r = v1 - v0
    v = (v2 - v1) - r
    return v0 - 2.0 * alpha * r + alpha * alpha * v


def _run_fixed_point(step, loglik, pack, unpack, start, config):
    """Generic (accelerated) EM driver over an abstract fixed-point map.

    step(params) -> params applies one EM cycle; loglik(params) evaluates the
    objective; pack/unpack move between ParameterSets and flat vectors for
    extrapolation. Returns (params, trace, evaluations, converged).
    """
    params = start
    trace = [loglik(params)]
    evals = 0
    converged = False
    endpoints = []
    while evals < config.max_iterations:
        if config.acceleration == "none":
            params = step(params)
            evals += 1
            trace.append(loglik(params))
            if abs(trace[-1] - trace[-2]) < config.loglik_tolerance:
                converged = True
                break
            continue
        p1 = step(params)
        evals += 1
        ll1 = loglik(p1)
        if abs(ll1 - trace[-1]) < config.loglik_tolerance:
            params = p1
            trace.append(ll1)
            converged = True
            break
        if evals >= config.max_iterations:
            params = p1
            trace.append(ll1)
            break
        p2 = step(p1)
        evals += 1
        ll2 = loglik(p2)
        accepted = p2
        accepted_ll = ll2
        v0, v1, v2 = pack(params), pack(p1), pack(p2)
        alpha = _squarem_alpha(v0, v1, v2)
        # Try the aggressive step length first; on a failed candidate, halve
        # alpha toward -1 (where the candidate is exactly p2) and retry. Slow
        # linear EM regimes are precisely where large |alpha| pays off, so a
        # single rejection must not forfeit the whole extrapolation.
        for _ in range(MAX_BACKTRACKS):
            if alpha is None or alpha >= -1.0 or evals >= config.max_iterations:
                break
            candidate_vec = _squarem_candidate(v0, v1, v2, alpha)
            if not np.all(np.isfinite(candidate_vec)):
                alpha = (alpha - 1.0) / 2.0
                continue
            try:
                stabilized = step(unpack(candidate_vec))
                evals += 1
                ll_stab = loglik(stabilized)
            except (MedmissError, np.linalg.LinAlgError):
                alpha = (alpha - 1.0) / 2.0
                continue
            if ll_stab >= ll2 - MONOTONICITY_SLACK:
                accepted = stabilized
                accepted_ll = ll_stab
                break
            alpha = (alpha - 1.0) / 2.0
        params = accepted
        trace.append(accepted_ll)
        if abs(trace[-1] - trace[-2]) < config.loglik_tolerance:
            converged = True
            break
        # Outer extrapolation over accepted cycle endpoints. In a stalled
        # regime the endpoint sequence decays along one dominant mode, so the
        # same S3 step applied at this coarser spacing jumps much further
        # than the within-cycle one. Attempted only after two consecutive
        # small cycle gains; any rejection empties the window so at most one
        # of every three stalled cycles is spent on a failed attempt.
        stall = abs(trace[-1] - trace[-2]) < STALL_FACTOR * config.loglik_tolerance
        prior_stall = (len(trace) > 2
                       and abs(trace[-2] - trace[-3])
                       < STALL_FACTOR * config.loglik_tolerance)
        if stall and prior_stall:
            endpoints.append(pack(params))
        else:
            endpoints = []
        if len(endpoints) == 3 and evals < config.max_iterations:
            outer_vec = _squarem_candidate(*endpoints)
            endpoints = []
            if outer_vec is not None and np.all(np.isfinite(outer_vec)):
                try:
                    outer = step(unpack(outer_vec))
                    evals += 1
                    ll_outer = loglik(outer)
                except (MedmissError, np.linalg.LinAlgError):
                    continue
                # Material improvement only: a marginal gain must not enter
                # the trace, where it would read as convergence while the
                # regular cycles are still progressing.
                if ll_outer >= trace[-1] + config.loglik_tolerance:
                    params = outer
                    trace.append(ll_outer)
    return params, trace, evals, converged


def run_em(dataset, family, config=None, interaction=False):
    """Estimate all model parameters jointly by (accelerated) EM.

    Alternates E and M steps until the observed-data log-likelihood moves by
    less than the configured tolerance, then applies the label-switching
    correction. The report's trace starts at the initial log-likelihood and
    records one value per accepted step.
    """
    if config is None:
        config = EmConfig()
    n_params = (dataset.design_mediator.shape[1]
                + 2 * dataset.design_observation.shape[1]
                + dataset.outcome_design(0.0, interaction).shape[1])
    if dataset.n < n_params:
        raise ConfigurationError("fewer subjects than parameters")
    if config.start is not None:
        start = config.start
        if start.specificity_fixed != config.fix_specificity:
            raise ConfigurationError(
                "start's specificity mode does not match the configuration"
            )
    else:
        start = initialize(
            dataset, family, interaction,
            strategy=config.init_strategy, seed=config.seed,
            fix_specificity=config.fix_specificity,
        )
    workspace = _Workspace(dataset, interaction)
    cache = {}

    def components(params):
        # step and loglik are both called on most iterates; the per-subject
        # log components are the dominant shared cost, so compute them once
        # per distinct ParameterSet (identity is safe: the key is kept alive
        # here, and iterates are never mutated).
        if cache.get("key") is not params:
            cache["key"] = params
            cache["value"] = joint_log_components(params, dataset, family)
        return cache["value"]

    def step(params):
        comp1, comp2 = components(params)
        degenerate = np.isneginf(comp1) & np.isneginf(comp2)
        if np.any(degenerate):
            raise DegenerateSubjectError(int(np.argmax(degenerate)))
        r1 = expit(comp1 - comp2)
        r = _clamped(Responsibilities(np.column_stack([r1, 1.0 - r1])))
        return _m_step(r, workspace, family, config.fix_specificity, warm=params)

    def loglik(params):
        comp1, comp2 = components(params)
        value = float(np.sum(np.logaddexp(comp1, comp2)))
        if not np.isfinite(value):
            raise EvaluationError("observed-data log-likelihood is non-finite")
        return value

    params, trace, evals, converged = _run_fixed_point(
        step, loglik,
        lambda p: _pack(p, family),
        lambda v: _unpack(v, start, family),
        start, config,
    )
    corrected = correct_label_switching(params, dataset)
    swapped = corrected is not params
    _warn_if_near_separation(corrected, family)
    sens, spec = average_sens_spec(corrected, dataset)
    return FitReport(
        method="em",
        params=corrected,
        loglik_trace=trace,
        iterations=evals,
        converged=converged,
        avg_sensitivity=sens,
        avg_specificity=spec,
        label_swap_applied=swapped,
        metadata={
            "acceleration": config.acceleration,
            "em_map_evaluations": evals,
            "specificity_fixed": config.fix_specificity,
        },
    )


@dataclass
class MisclassificationFit:
    """Step-1 fit of the mediator and observation models alone."""

    beta: np.ndarray
    gamma: np.ndarray
    loglik_trace: list
    iterations: int
    converged: bool
    avg_sensitivity: float
    avg_specificity: float
    label_swap_applied: bool
    specificity_fixed: bool = False


def _mis_params(beta, gamma, dataset, fix_specificity):
    p = dataset.n_confounders
    return ParameterSet(
        beta=beta, gamma=gamma, theta=np.zeros(3 + p), sigma2=None,
        interaction=False, specificity_fixed=fix_specificity,
    )


def _mis_log_components(params, dataset):
    log_p1, log_p2 = log_true_mediator_prob(params, dataset)
    comp1 = log_p1 + log_observation_prob(params, dataset, 1)
    comp2 = log_p2 + log_observation_prob(params, dataset, 2)
    return comp1, comp2


def misclassification_loglik(beta, gamma, dataset, fix_specificity=False):
    """Marginal log-likelihood of M* given (X, C, Z), the outcome left out."""
    params = _mis_params(beta, gamma, dataset, fix_specificity)
    comp1, comp2 = _mis_log_components(params, dataset)
    value = float(np.sum(np.logaddexp(comp1, comp2)))
    if not np.isfinite(value):
        raise EvaluationError("misclassification log-likelihood is non-finite")
    return value


def run_misclassification_em(dataset, config=None):
    """Fit the mediator and observation models by EM, ignoring the outcome.

    This is the shared first step of the two-step correction methods: the
    latent true mediator is integrated out of the M* likelihood alone, so the
    outcome model never influences the recovered sensitivity/specificity.
    """
    if config is None:
        config = EmConfig()
    proxy_fit = glm.fit_weighted_glm(
        dataset.design_mediator,
        dataset.mstar_indicator,
        np.ones(dataset.n),
        glm.BERNOULLI,
        column_names=dataset.mediator_column_names(),
    )
    q = dataset.n_misclass_covariates
    gamma = np.zeros((2, 1 + q))
    gamma[0, 0] = 2.0
    gamma[1, 0] = -2.0
    if config.fix_specificity:
        gamma[1] = _fixed_gamma_row2(q)
    start = _mis_params(proxy_fit.coefficients, gamma, dataset,
                        config.fix_specificity)
    workspace_names = dataset.mediator_column_names()
    n = dataset.n
    mediator_design2 = np.vstack([dataset.design_mediator] * 2)
    mediator_response2 = np.concatenate([np.ones(n), np.zeros(n)])
    state = {"validated": False}
    cache = {}

    def components(params):
        if cache.get("key") is not params:
            cache["key"] = params
            cache["value"] = _mis_log_components(params, dataset)
        return cache["value"]

    def step(params):
        comp1, comp2 = components(params)
        degenerate = np.isneginf(comp1) & np.isneginf(comp2)
        if np.any(degenerate):
            raise DegenerateSubjectError(int(np.argmax(degenerate)))
        r1 = expit(comp1 - comp2)
        r = _clamped(Responsibilities(np.column_stack([r1, 1.0 - r1])))
        fast = state["validated"]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeparationWarning)
            beta_fit = glm.fit_weighted_glm(
                mediator_design2,
                mediator_response2,
                np.concatenate([r[:, 0], r[:, 1]]),
                glm.BERNOULLI,
                column_names=workspace_names,
                start=params.beta,
                assume_valid=fast,
            )
            gamma_new = np.zeros_like(params.gamma)
            for j in (0, 1):
                if j == 1 and config.fix_specificity:
                    gamma_new[1] = _fixed_gamma_row2(q)
                    continue
                fit = glm.fit_weighted_glm(
                    dataset.design_observation,
                    dataset.mstar_indicator,
                    r[:, j],
                    glm.BERNOULLI,
                    column_names=dataset.observation_column_names(),
                    start=params.gamma[j],
                    assume_valid=fast,
                )
                gamma_new[j] = fit.coefficients
        state["validated"] = True
        return _mis_params(beta_fit.coefficients, gamma_new, dataset,
                           config.fix_specificity)

    def loglik(params):
        comp1, comp2 = components(params)
        value = float(np.sum(np.logaddexp(comp1, comp2)))
        if not np.isfinite(value):
            raise EvaluationError("misclassification log-likelihood is non-finite")
        return value

    def pack(params):
        parts = [params.beta, params.gamma[0]]
        if not config.fix_specificity:
            parts.append(params.gamma[1])
        return np.concatenate(parts)

    def unpack(vector):
        nb = start.beta.shape[0]
        ng = start.gamma.shape[1]
        beta = vector[:nb]
        gamma = np.zeros_like(start.gamma)
        gamma[0] = vector[nb : nb + ng]
        if config.fix_specificity:
            gamma[1] = _fixed_gamma_row2(ng - 1)
        else:
            gamma[1] = vector[nb + ng : nb + 2 * ng]
        return _mis_params(beta, gamma, dataset, config.fix_specificity)

    params, trace, evals, converged = _run_fixed_point(
        step, loglik, pack, unpack, start, config,
    )
    sens, spec = average_sens_spec(params, dataset)
    swapped = False
    if not config.fix_specificity:
        if sens + spec == 1.0:
            raise UnidentifiableFitError(
                "average sensitivity + specificity equals 1 exactly"
            )
        if sens + spec < 1.0:
            params = _mis_params(
                -params.beta, params.gamma[::-1].copy(), dataset, False
            )
            swapped = True
            sens, spec = average_sens_spec(params, dataset)
    _warn_if_near_separation(params, None)
    return MisclassificationFit(
        beta=params.beta,
        gamma=params.gamma,
        loglik_trace=trace,
        iterations=evals,
        converged=converged,
        avg_sensitivity=sens,
        avg_specificity=spec,
        label_swap_applied=swapped,
        specificity_fixed=config.fix_specificity,
    )
