"""Moment-corrected least squares for Normal outcomes."""

import numpy as np
import pytest

from conftest import moderate_params, draw_dataset
from medmiss import glm
from medmiss.exceptions import CorrectionInfeasibleError, UnsupportedFamilyError
from medmiss.model import MediationDataset, fit_naive
from medmiss.ols import corrected_normal_equations, run_ols_correction


def test_zero_rates_reduce_to_the_naive_fit():
    params = moderate_params(glm.NORMAL)
    ds, _ = draw_dataset(params, glm.NORMAL, n=500, seed=51)
    g, h = corrected_normal_equations(ds, 0.0, 0.0)
    theta = np.linalg.solve(g, h)
    naive = fit_naive(ds, glm.NORMAL)
    np.testing.assert_allclose(theta, naive.theta_star, atol=1e-10)


def test_moment_matrices_match_an_explicit_loop():
    params = moderate_params(glm.NORMAL, interaction=True)
    ds, _ = draw_dataset(params, glm.NORMAL, n=40, seed=52)
    alpha0, alpha1 = 0.1, 0.15
    g, h = corrected_normal_equations(ds, alpha0, alpha1, interaction=True)

    k = 5
    g_loop = np.zeros((k, k))
    h_loop = np.zeros(k)
    denom = 1.0 - alpha0 - alpha1
    for i in range(ds.n):
        ind = 1.0 if ds.m_star[i] == 1 else 0.0
        m_tilde = (ind - alpha0) / denom
        w0 = np.array([1.0, ds.x[i], ds.c[i, 0], 0.0, 0.0])
        w1 = np.array([1.0, ds.x[i], ds.c[i, 0], 1.0, ds.x[i]])
        g_loop += (1.0 - m_tilde) * np.outer(w0, w0) + m_tilde * np.outer(w1, w1)
        h_loop += ds.y[i] * ((1.0 - m_tilde) * w0 + m_tilde * w1)
    np.testing.assert_allclose(g, g_loop, atol=1e-10)
    np.testing.assert_allclose(h, h_loop, atol=1e-10)


def test_infeasible_rates_raise():
    params = moderate_params(glm.NORMAL)
    ds, _ = draw_dataset(params, glm.NORMAL, n=50, seed=53)
    with pytest.raises(CorrectionInfeasibleError):
        corrected_normal_equations(ds, 0.5, 0.5)
    with pytest.raises(CorrectionInfeasibleError):
        corrected_normal_equations(ds, 0.7, 0.6)


def test_non_normal_families_are_rejected():
    params = moderate_params(glm.BERNOULLI)
    ds, _ = draw_dataset(params, glm.BERNOULLI, n=100, seed=54)
    with pytest.raises(UnsupportedFamilyError):
        run_ols_correction(ds, family=glm.BERNOULLI)
    with pytest.raises(UnsupportedFamilyError):
        run_ols_correction(ds, family=glm.POISSON)


def test_correction_moves_toward_the_generating_value():
    params = moderate_params(glm.NORMAL)
    ds, _ = draw_dataset(params, glm.NORMAL, n=6000, seed=55)
    naive = fit_naive(ds, glm.NORMAL)
    report = run_ols_correction(ds)
    truth = params.theta_m
    assert abs(report.params.theta_m - truth) < 0.3
    assert abs(naive.theta_star[-1] - truth) > abs(report.params.theta_m - truth)


def test_report_structure():
    params = moderate_params(glm.NORMAL)
    ds, _ = draw_dataset(params, glm.NORMAL, n=800, seed=56)
    report = run_ols_correction(ds)
    assert report.method == "ols"
    assert report.params.sigma2 > 0
    assert 0.0 < report.avg_sensitivity <= 1.0
    assert 0.0 < report.avg_specificity <= 1.0
    meta = report.metadata
    assert 0.0 <= meta["false_positive_rate"] < 1.0
    assert 0.0 <= meta["false_negative_rate"] < 1.0
    assert (meta["false_positive_rate"] + meta["false_negative_rate"]) < 1.0
    trace = np.array(report.loglik_trace)
    assert np.all(np.diff(trace) >= -1e-10)


def test_clean_data_estimated_rates_stay_small():
    params = moderate_params(glm.NORMAL)
    ds, true_m = draw_dataset(params, glm.NORMAL, n=1500, seed=57)
    clean = MediationDataset(ds.x, ds.c, ds.z, true_m, ds.y)
    report = run_ols_correction(clean)
    assert report.metadata["false_positive_rate"] < 0.02
    assert report.metadata["false_negative_rate"] < 0.02
    naive = fit_naive(clean, glm.NORMAL)
    np.testing.assert_allclose(report.params.theta, naive.theta_star, atol=0.05)
