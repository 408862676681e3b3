"""Shared test utilities: data drawn from pinned parameter values.

The generator here uses explicit per-subject arithmetic and never calls the
package's own simulation module, so tests that score fits against the
generating truth do not share code with the implementation under test.
"""

import numpy as np
from scipy.special import expit

from medmiss import glm
from medmiss.model import MediationDataset, ParameterSet

FAMILIES = (glm.NORMAL, glm.BERNOULLI, glm.POISSON)


def moderate_params(family, interaction=False, specificity_fixed=False):
    """A fixed, well-identified parameter point for the given family.

    One confounder, one misclassification covariate. Average sensitivity
    and specificity land near 0.90 so the latent classes are identified
    but the misclassification is far from negligible.
    """
    beta = np.array([-0.4, 0.9, -0.6])
    if specificity_fixed:
        gamma = np.array([[2.2, 0.4], [-np.inf, 0.0]])
    else:
        gamma = np.array([[2.2, 0.4], [-2.4, -0.3]])
    sigma2 = None
    if family.name == "normal":
        theta = [0.8, 1.2, -0.3, -1.6]
        sigma2 = 1.0
    elif family.name == "bernoulli":
        theta = [0.4, 0.9, -0.4, -1.3]
    else:
        theta = [0.3, 0.5, -0.2, -0.9]
    if interaction:
        theta = theta + [0.5]
    return ParameterSet(
        beta=beta,
        gamma=gamma,
        theta=np.array(theta),
        sigma2=sigma2,
        interaction=interaction,
        specificity_fixed=specificity_fixed,
    )


def draw_dataset(params, family, n=200, seed=0):
    """Simulate (dataset, true_m) from the mixture model.

    Covariates are standard normal. true_m is returned for scoring only
    and is never placed on the dataset object.
    """
    rng = np.random.default_rng(seed)
    p = params.beta.shape[0] - 2
    q = params.gamma.shape[1] - 1
    x = rng.normal(0.0, 1.0, n)
    c = rng.normal(0.0, 1.0, (n, p))
    z = rng.normal(0.0, 1.0, (n, q))
    lin_m = params.beta[0] + params.beta[1] * x + c @ params.beta[2:]
    m_ind = (rng.random(n) < expit(lin_m)).astype(float)
    sens = expit(params.gamma[0, 0] + z @ params.gamma[0, 1:])
    if params.specificity_fixed:
        fpr = np.zeros(n)
    else:
        fpr = expit(params.gamma[1, 0] + z @ params.gamma[1, 1:])
    rate = np.where(m_ind == 1.0, sens, fpr)
    mstar_ind = rng.random(n) < rate
    eta = (params.theta[0] + params.theta[1] * x + c @ params.theta[2:2 + p]
           + params.theta_m * m_ind)
    if params.interaction:
        eta = eta + params.theta_xm * x * m_ind
    if family.name == "normal":
        y = eta + rng.normal(0.0, np.sqrt(params.sigma2), n)
    elif family.name == "bernoulli":
        y = (rng.random(n) < expit(eta)).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    dataset = MediationDataset(
        x=x, c=c, z=z, m_star=np.where(mstar_ind, 1, 2), y=y
    )
    true_m = np.where(m_ind == 1.0, 1, 2)
    return dataset, true_m


def glm_cases():
    """Fixture grid for the weighted GLM solver.

    Returns (label, design, response, weights, family) tuples spanning the
    three families, one to three covariates (one pair correlated), and both
    unit and non-constant weights.
    """
    cases = []
    rng = np.random.default_rng(42)
    for family in FAMILIES:
        for p, correlated in ((1, False), (2, False), (3, True)):
            for unit_weights in (True, False):
                n = 160
                covs = rng.normal(0.0, 1.0, (n, p))
                if correlated:
                    covs[:, 1] = 0.85 * covs[:, 0] + 0.3 * covs[:, 1]
                design = np.column_stack([np.ones(n), covs])
                coef = rng.uniform(-0.8, 0.8, p + 1)
                if family.name == "poisson":
                    coef[0] = rng.uniform(-0.5, 0.5)
                eta = design @ coef
                if family.name == "normal":
                    response = eta + rng.normal(0.0, 1.0, n)
                elif family.name == "bernoulli":
                    response = (rng.random(n) < expit(eta)).astype(float)
                else:
                    response = rng.poisson(np.exp(eta)).astype(float)
                if unit_weights:
                    weights = np.ones(n)
                else:
                    weights = rng.uniform(0.2, 2.0, n)
                label = "%s-p%d-%s" % (
                    family.name, p, "unit" if unit_weights else "varied"
                )
                cases.append((label, design, response, weights, family))
    return cases


def solve_wls(design, response, weights):
    """Closed-form weighted least squares via the normal equations."""
    xtw = design.T * weights
    return np.linalg.solve(xtw @ design, xtw @ response)
