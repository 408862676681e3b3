"""Dataset container, parameter container, and model probability helpers."""

import math

import numpy as np
import pytest

from conftest import FAMILIES, moderate_params, draw_dataset
from medmiss import glm
from medmiss.exceptions import ConfigurationError
from medmiss.model import (
    MediationDataset,
    ParameterSet,
    Responsibilities,
    average_sens_spec,
    fit_naive,
    joint_log_components,
    log_observation_prob,
    log_true_mediator_prob,
    observed_data_loglik,
    observed_mediator_prob,
    outcome_linpred,
    swap_labels,
    true_mediator_prob,
)
from medmiss.oracles import independent_newton_glm


def _tiny_dataset():
    return MediationDataset(
        x=np.array([0.5, -1.0, 2.0]),
        c=np.array([[1.0], [0.0], [-0.5]]),
        z=np.array([[0.2], [0.1], [-0.3]]),
        m_star=np.array([1, 2, 1]),
        y=np.array([0.3, 1.2, -0.7]),
    )


def test_dataset_shapes_and_designs():
    ds = _tiny_dataset()
    assert ds.n == 3
    assert ds.n_confounders == 1
    assert ds.n_misclass_covariates == 1
    np.testing.assert_array_equal(
        ds.design_mediator,
        np.column_stack([np.ones(3), ds.x, ds.c]),
    )
    np.testing.assert_array_equal(
        ds.design_observation, np.column_stack([np.ones(3), ds.z])
    )
    np.testing.assert_array_equal(ds.mstar_indicator, [1.0, 0.0, 1.0])
    assert ds.mediator_column_names() == ["intercept", "x", "c1"]
    assert ds.observation_column_names() == ["intercept", "z1"]
    assert ds.outcome_column_names(False) == ["intercept", "x", "c1", "mediator"]
    assert ds.outcome_column_names(True) == [
        "intercept", "x", "c1", "mediator", "x_mediator",
    ]
    ind = np.array([1.0, 0.0, 1.0])
    design = ds.outcome_design(ind, True)
    np.testing.assert_array_equal(design[:, -2], ind)
    np.testing.assert_array_equal(design[:, -1], ds.x * ind)


def test_dataset_validation():
    good = dict(
        x=np.zeros(3), c=np.zeros((3, 1)), z=np.zeros((3, 1)),
        m_star=np.array([1, 2, 1]), y=np.zeros(3),
    )
    MediationDataset(**good)
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "x": np.zeros((3, 1))})
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "c": np.zeros((4, 1))})
    # A one-dimensional covariate vector is promoted to a single column.
    assert MediationDataset(**{**good, "z": np.zeros(3)}).z.shape == (3, 1)
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "z": np.zeros(4)})
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "m_star": np.array([1, 2, 3])})
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "m_star": np.array([0, 1, 1])})
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "y": np.array([0.0, np.inf, 0.0])})
    with pytest.raises(ConfigurationError):
        MediationDataset(**{**good, "x": np.array([0.0, np.nan, 0.0])})


def test_dataset_arrays_are_read_only():
    ds = _tiny_dataset()
    with pytest.raises(ValueError):
        ds.x[0] = 9.0
    with pytest.raises(ValueError):
        ds.design_mediator[0, 0] = 2.0


def test_parameter_set_validation():
    beta = np.array([0.0, 1.0, -1.0])
    gamma = np.array([[2.0, 0.0], [-2.0, 0.0]])
    theta = np.array([0.0, 1.0, 0.5, -1.0])
    ParameterSet(beta, gamma, theta, sigma2=1.0)
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma[:1], theta)
    with pytest.raises(ConfigurationError):
        ParameterSet(np.array([0.0, np.inf, 0.0]), gamma, theta)
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma, np.array([0.0, np.nan, 0.5, -1.0]))
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, np.array([[np.inf, 0.0], [-2.0, 0.0]]), theta)
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma, theta, sigma2=0.0)
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma, theta, sigma2=-1.0)
    # theta length is pinned to the design: 3 + confounders (+ interaction).
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma, theta[:-1])
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, gamma, theta, interaction=True)

    fixed = np.array([[2.0, 0.3], [-np.inf, 0.0]])
    p = ParameterSet(beta, fixed, theta, specificity_fixed=True)
    assert p.gamma[1, 0] == -np.inf
    with pytest.raises(ConfigurationError):
        ParameterSet(beta, fixed, theta)  # -inf needs the fixed mode


def test_parameter_accessors():
    params = moderate_params(glm.NORMAL, interaction=True)
    assert params.theta_m == params.theta[-2]
    assert params.theta_xm == params.theta[-1]
    assert params.theta_x == params.theta[1]
    plain = moderate_params(glm.NORMAL)
    assert plain.theta_m == plain.theta[-1]
    assert plain.theta_xm == 0.0


def test_probability_helpers_match_hand_arithmetic():
    ds = _tiny_dataset()
    params = moderate_params(glm.NORMAL)
    for i in range(ds.n):
        lin = params.beta[0] + params.beta[1] * ds.x[i] + params.beta[2] * ds.c[i, 0]
        expected = 1.0 / (1.0 + math.exp(-lin))
        assert abs(true_mediator_prob(params, ds)[i] - expected) < 1e-12
        lin1 = params.gamma[0, 0] + params.gamma[0, 1] * ds.z[i, 0]
        assert abs(
            observed_mediator_prob(params, ds, 1)[i]
            - 1.0 / (1.0 + math.exp(-lin1))
        ) < 1e-12
        lin2 = params.gamma[1, 0] + params.gamma[1, 1] * ds.z[i, 0]
        assert abs(
            observed_mediator_prob(params, ds, 2)[i]
            - 1.0 / (1.0 + math.exp(-lin2))
        ) < 1e-12

    sens, spec = average_sens_spec(params, ds)
    assert abs(sens - np.mean(observed_mediator_prob(params, ds, 1))) < 1e-12
    assert abs(spec - np.mean(1.0 - observed_mediator_prob(params, ds, 2))) < 1e-12

    fixed = moderate_params(glm.NORMAL, specificity_fixed=True)
    _, spec_fixed = average_sens_spec(fixed, ds)
    assert spec_fixed == 1.0
    np.testing.assert_array_equal(observed_mediator_prob(fixed, ds, 2), 0.0)


def test_log_helpers_exponentiate_to_plain_probabilities():
    params = moderate_params(glm.BERNOULLI)
    ds, _ = draw_dataset(params, glm.BERNOULLI, n=25, seed=2)
    log_p1, log_p2 = log_true_mediator_prob(params, ds)
    p1 = true_mediator_prob(params, ds)
    np.testing.assert_allclose(np.exp(log_p1), p1, rtol=1e-12)
    np.testing.assert_allclose(np.exp(log_p2), 1.0 - p1, rtol=1e-12)
    for latent in (1, 2):
        rate = observed_mediator_prob(params, ds, latent)
        observed = np.where(ds.m_star == 1, rate, 1.0 - rate)
        np.testing.assert_allclose(
            np.exp(log_observation_prob(params, ds, latent)), observed,
            rtol=1e-12,
        )


def test_joint_components_and_loglik_match_explicit_products():
    for family in FAMILIES:
        params = moderate_params(family)
        ds, _ = draw_dataset(params, family, n=12, seed=4)
        comp1, comp2 = joint_log_components(params, ds, family)
        total = 0.0
        for i in range(ds.n):
            lin = (params.beta[0] + params.beta[1] * ds.x[i]
                   + params.beta[2] * ds.c[i, 0])
            pi1 = 1.0 / (1.0 + math.exp(-lin))
            joint = []
            for latent, prior in ((1, pi1), (2, 1.0 - pi1)):
                g = params.gamma[latent - 1]
                rate = 1.0 / (1.0 + math.exp(-(g[0] + g[1] * ds.z[i, 0])))
                obs = rate if ds.m_star[i] == 1 else 1.0 - rate
                ind = 1.0 if latent == 1 else 0.0
                eta = (params.theta[0] + params.theta[1] * ds.x[i]
                       + params.theta[2] * ds.c[i, 0] + params.theta_m * ind)
                if family.name == "normal":
                    dens = math.exp(-0.5 * (ds.y[i] - eta) ** 2 / params.sigma2)
                    dens /= math.sqrt(2.0 * math.pi * params.sigma2)
                elif family.name == "bernoulli":
                    mu = 1.0 / (1.0 + math.exp(-eta))
                    dens = mu if ds.y[i] == 1.0 else 1.0 - mu
                else:
                    lam = math.exp(eta)
                    dens = (math.exp(-lam) * lam ** ds.y[i]
                            / math.factorial(int(ds.y[i])))
                joint.append(prior * obs * dens)
            np.testing.assert_allclose(math.exp(comp1[i]), joint[0], rtol=1e-10)
            np.testing.assert_allclose(math.exp(comp2[i]), joint[1], rtol=1e-10)
            total += math.log(joint[0] + joint[1])
        assert abs(observed_data_loglik(params, ds, family) - total) < 1e-8


def test_outcome_linpred_matches_design_product():
    params = moderate_params(glm.POISSON, interaction=True)
    ds, _ = draw_dataset(params, glm.POISSON, n=15, seed=6)
    ind = np.ones(ds.n)
    expected = ds.outcome_design(ind, True) @ params.theta
    np.testing.assert_allclose(
        outcome_linpred(params, ds, ind), expected, rtol=1e-12
    )


def test_naive_fit_matches_direct_oracle_fits():
    for family in FAMILIES:
        interaction = family.name == "poisson"
        params = moderate_params(family, interaction=interaction)
        ds, _ = draw_dataset(params, family, n=400, seed=8)
        naive = fit_naive(ds, family, interaction)
        beta_oracle = independent_newton_glm(
            ds.design_mediator, ds.mstar_indicator, np.ones(ds.n), glm.BERNOULLI
        )
        np.testing.assert_allclose(naive.beta_star, beta_oracle, atol=1e-8)
        design = ds.outcome_design(ds.mstar_indicator, interaction)
        theta_oracle = independent_newton_glm(
            design, ds.y, np.ones(ds.n), family
        )
        np.testing.assert_allclose(naive.theta_star, theta_oracle, atol=1e-8)
        if family.name == "normal":
            resid = ds.y - design @ naive.theta_star
            assert abs(naive.sigma2_star - np.mean(resid ** 2)) < 1e-10
        else:
            assert naive.sigma2_star is None


def test_swap_labels_is_an_involution_preserving_the_likelihood():
    for family in FAMILIES:
        for interaction in (False, True):
            params = moderate_params(family, interaction=interaction)
            ds, _ = draw_dataset(params, family, n=60, seed=10)
            swapped = swap_labels(params)
            assert observed_data_loglik(swapped, ds, family) == pytest.approx(
                observed_data_loglik(params, ds, family), abs=1e-10
            )
            sens, spec = average_sens_spec(params, ds)
            sens_s, spec_s = average_sens_spec(swapped, ds)
            assert sens_s == pytest.approx(1.0 - spec, abs=1e-12)
            assert spec_s == pytest.approx(1.0 - sens, abs=1e-12)
            back = swap_labels(swapped)
            np.testing.assert_allclose(back.beta, params.beta, atol=1e-12)
            np.testing.assert_allclose(back.gamma, params.gamma, atol=1e-12)
            np.testing.assert_allclose(back.theta, params.theta, atol=1e-12)


def test_swap_labels_rejects_fixed_specificity():
    params = moderate_params(glm.NORMAL, specificity_fixed=True)
    with pytest.raises(ConfigurationError):
        swap_labels(params)


def test_responsibilities_validation():
    Responsibilities(np.array([[0.3, 0.7], [1.0, 0.0]]))
    with pytest.raises(ConfigurationError):
        Responsibilities(np.array([0.3, 0.7]))
    with pytest.raises(ConfigurationError):
        Responsibilities(np.array([[0.3, 0.8]]))
    with pytest.raises(ConfigurationError):
        Responsibilities(np.array([[-0.1, 1.1]]))
