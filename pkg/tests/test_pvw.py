"""Predictive value weighting: posterior weights, expansion, and refits."""

import warnings

import numpy as np
import pytest

from conftest import FAMILIES, moderate_params, draw_dataset
from medmiss import glm
from medmiss.em import run_misclassification_em
from medmiss.exceptions import ConfigurationError, SeparationWarning
from medmiss.model import MediationDataset, ParameterSet, fit_naive
from medmiss.oracles import brute_force_posterior, independent_newton_glm
from medmiss.pvw import (
    PredictiveValues,
    compute_predictive_values,
    fit_outcome_weighted,
    run_pvw,
    weighted_expansion,
)


def test_predictive_values_validation():
    PredictiveValues(np.array([0.0, 0.5, 1.0]))
    with pytest.raises(ConfigurationError):
        PredictiveValues(np.array([[0.5], [0.5]]))
    with pytest.raises(ConfigurationError):
        PredictiveValues(np.array([0.5, 1.2]))
    with pytest.raises(ConfigurationError):
        PredictiveValues(np.array([-0.1, 0.5]))


def test_predictive_values_match_posterior_oracle():
    for family in FAMILIES:
        params = moderate_params(family)
        ds, _ = draw_dataset(params, family, n=90, seed=41)
        pv = compute_predictive_values(
            params.beta, params.gamma, params.theta, ds, family,
            sigma2=params.sigma2,
        )
        oracle = brute_force_posterior(params, ds, family)
        np.testing.assert_allclose(pv.values, oracle.r[:, 0], atol=1e-12,
                                   err_msg=family.name)


def test_expansion_layout():
    params = moderate_params(glm.NORMAL, interaction=True)
    ds, _ = draw_dataset(params, glm.NORMAL, n=40, seed=42)
    lam = np.linspace(0.05, 0.95, ds.n)
    design, response, weights = weighted_expansion(
        PredictiveValues(lam), ds, interaction=True
    )
    n = ds.n
    assert design.shape == (2 * n, 5)
    np.testing.assert_array_equal(design[:n, -2], 1.0)
    np.testing.assert_array_equal(design[n:, -2], 0.0)
    np.testing.assert_array_equal(design[:n, -1], ds.x)
    np.testing.assert_array_equal(design[n:, -1], 0.0)
    np.testing.assert_array_equal(response, np.concatenate([ds.y, ds.y]))
    np.testing.assert_allclose(weights, np.concatenate([lam, 1.0 - lam]))


def test_symmetric_weights_zero_out_the_mediator_terms():
    # With every predictive value at 1/2, the duplicated rows are perfectly
    # balanced, so the mediator (and interaction) coefficients must vanish:
    # any intercept/x score being zero forces the m and x*m scores to zero.
    for family in FAMILIES:
        params = moderate_params(family, interaction=True)
        ds, _ = draw_dataset(params, family, n=250, seed=43)
        lam = PredictiveValues(np.full(ds.n, 0.5))
        fit = fit_outcome_weighted(lam, ds, family, interaction=True)
        assert abs(fit.coefficients[-2]) < 1e-6, family.name
        assert abs(fit.coefficients[-1]) < 1e-6, family.name


def test_weighted_refit_matches_newton_oracle():
    for family in FAMILIES:
        params = moderate_params(family)
        ds, _ = draw_dataset(params, family, n=200, seed=44)
        pv = compute_predictive_values(
            params.beta, params.gamma, params.theta, ds, family,
            sigma2=params.sigma2,
        )
        fit = fit_outcome_weighted(pv, ds, family)
        design, response, weights = weighted_expansion(pv, ds)
        oracle = independent_newton_glm(design, response, weights, family)
        np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-8,
                                   err_msg=family.name)


def test_zero_misclassification_matches_complete_data_fit():
    # A strongly separated mediator model so the first-stage mixture is
    # well identified; with weak separation the mixture can absorb
    # sampling noise as pseudo-misclassification at this sample size.
    base = moderate_params(glm.NORMAL)
    params = ParameterSet(
        beta=np.array([1.0, -2.0, -2.5]),
        gamma=base.gamma,
        theta=base.theta,
        sigma2=base.sigma2,
    )
    ds, true_m = draw_dataset(params, glm.NORMAL, n=4000, seed=45)
    clean = MediationDataset(ds.x, ds.c, ds.z, true_m, ds.y)
    complete = fit_naive(clean, glm.NORMAL)
    with warnings.catch_warnings():
        # Estimated misclassification sits at the boundary here, so the
        # first-stage logit is legitimately near-separated.
        warnings.simplefilter("ignore", SeparationWarning)
        report = run_pvw(clean, glm.NORMAL)
    np.testing.assert_allclose(report.params.theta, complete.theta_star,
                               atol=0.05)
    assert report.converged
    assert report.metadata["outcome_passes"] >= 1


def test_step_one_is_shared_with_the_misclassification_em():
    params = moderate_params(glm.BERNOULLI)
    ds, _ = draw_dataset(params, glm.BERNOULLI, n=600, seed=46)
    report = run_pvw(ds, glm.BERNOULLI)
    step1 = run_misclassification_em(ds)
    np.testing.assert_array_equal(report.params.beta, step1.beta)
    np.testing.assert_array_equal(report.params.gamma, step1.gamma)


def test_outcome_passes_reach_a_fixed_point():
    for family in FAMILIES:
        params = moderate_params(family)
        ds, _ = draw_dataset(params, family, n=400, seed=47)
        report = run_pvw(ds, family)
        final = report.params
        pv = compute_predictive_values(
            final.beta, final.gamma, final.theta, ds, family,
            sigma2=final.sigma2,
        )
        refit = fit_outcome_weighted(pv, ds, family)
        np.testing.assert_allclose(refit.coefficients, final.theta, atol=1e-6,
                                   err_msg=family.name)


def test_run_pvw_interaction_smoke():
    params = moderate_params(glm.POISSON, interaction=True)
    ds, _ = draw_dataset(params, glm.POISSON, n=500, seed=48)
    report = run_pvw(ds, glm.POISSON, interaction=True)
    assert report.method == "pvw"
    assert report.params.interaction
    assert report.metadata["outcome_passes"] >= 2
