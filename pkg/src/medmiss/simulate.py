"""Simulation harness: scenario generators and multi-replicate method studies.

Five built-in scenarios cover the outcome families and misclassification
regimes the estimators are designed for:

1. Normal outcome, no exposure-mediator interaction.
2. Bernoulli outcome, no interaction.
3. Normal outcome with interaction.
4. Bernoulli outcome, one-sided misclassification (perfect specificity),
   binary exposure, five confounders, mediator prevalence set by level.
5. Poisson outcome with interaction.

Settings 1, 2, 3, and 5 share the mediator and misclassification generators
and vary only the outcome; their ``level`` selects how noisy the mediator
proxy is. Setting 4's ``level`` selects mediator prevalence instead.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import expit

from . import glm
from .em import EmConfig, run_em
from .exceptions import ConfigurationError, MedmissError
from .model import MediationDataset, ParameterSet, fit_naive
from .ols import run_ols_correction
from .pvw import run_pvw

SETTINGS = (1, 2, 3, 4, 5)
LEVELS = ("low", "medium", "high")
METHODS = ("naive", "em", "pvw", "ols")

MEDIATOR_BETA = np.array([1.0, -2.0, -2.5])
# Shape-1 Gamma for both; the confounder scale is calibrated so that the
# mediator prevalence lands in its documented [0.28, 0.30] band.
CONFOUNDER_SCALE = 1.45
GAMMA_LEVELS = {
    "low": np.array([[3.0, 2.0], [-2.0, -2.5]]),
    "medium": np.array([[1.8, 1.0], [-1.5, -1.0]]),
    "high": np.array([[1.0, 1.0], [-0.5, -1.5]]),
}
PREVALENCE_INTERCEPTS = {"low": -4.0, "medium": -2.5, "high": -1.0}

SETTING_FAMILIES = {
    1: glm.NORMAL,
    2: glm.BERNOULLI,
    3: glm.NORMAL,
    4: glm.BERNOULLI,
    5: glm.POISSON,
}
INTERACTION_SETTINGS = frozenset((3, 5))


@dataclass
class ScenarioSpec:
    """One simulation scenario.

    level is the misclassification level for settings 1/2/3/5 and the
    mediator-prevalence level for setting 4. n defaults to 10,000
    (setting 4: 20,000).
    """

    setting: int
    level: str
    n: int | None = None
    replicates: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigurationError("setting must be one of %s" % (SETTINGS,))
        if self.level not in LEVELS:
            raise ConfigurationError("level must be one of %s" % (LEVELS,))
        if self.n is None:
            self.n = 20000 if self.setting == 4 else 10000
        if self.n < 1:
            raise ConfigurationError("n must be at least 1")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")


def family_for_setting(setting):
    return SETTING_FAMILIES[setting]


def true_parameters(spec):
    """Generating parameter values for a scenario."""
    if spec.setting == 4:
        beta = np.array(
            [PREVALENCE_INTERCEPTS[spec.level], 2.0, 0.5, 0.0, -2.5, -0.5, 1.0]
        )
        gamma = np.array([[1.0, 0.5, 0.1], [-np.inf, 0.0, 0.0]])
        theta = np.array([-4.0, 1.5, 1.0, 0.0, 0.5, -0.5, -2.0, 0.2])
        return ParameterSet(beta, gamma, theta, specificity_fixed=True)
    gamma = GAMMA_LEVELS[spec.level].copy()
    if spec.setting == 1:
        return ParameterSet(
            MEDIATOR_BETA.copy(), gamma, np.array([1.0, 1.5, -0.2, -2.0]), sigma2=1.0
        )
    if spec.setting == 2:
        return ParameterSet(
            MEDIATOR_BETA.copy(), gamma, np.array([1.0, 1.5, -0.2, -2.0])
        )
    if spec.setting == 3:
        return ParameterSet(
            MEDIATOR_BETA.copy(), gamma,
            np.array([1.0, 1.5, -0.2, -2.0, 0.5]), sigma2=1.0, interaction=True,
        )
    return ParameterSet(
        MEDIATOR_BETA.copy(), gamma,
        np.array([-3.0, 1.0, -0.2, -1.0, 0.5]), interaction=True,
    )


@dataclass
class DatasetRealization:
    """A generated dataset plus the scoring-only ground truth.

    The true mediator classes are kept outside the MediationDataset so no
    estimator can see them; they exist only for scoring and diagnostics.
    """

    dataset: MediationDataset
    true_m: np.ndarray
    truth: ParameterSet
    marginals: dict


def _replicate_rng(spec, replicate):
    seq = np.random.SeedSequence(spec.seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.Philox(seq))


def generate_dataset(spec, replicate=0):
    """Draw one dataset for a scenario; replicate selects the RNG stream.

    Streams are counter-based and keyed by (seed, replicate), so any subset
    of replicates can be regenerated independently and in any order.
    """
    rng = _replicate_rng(spec, replicate)
    truth = true_parameters(spec)
    n = spec.n
    if spec.setting == 4:
        x = (rng.random(n) < 0.67).astype(float)
        c1 = rng.gamma(1.0, 1.0, n)
        c2 = np.abs(rng.normal(1.0, 2.0, n))
        c3 = (rng.random(n) < 0.2).astype(float)
        c4 = (rng.random(n) < 0.55).astype(float)
        c5 = rng.standard_normal(n)
        c = np.column_stack([c1, c2, c3, c4, c5])
        z = np.column_stack([c1, c3])
    else:
        x = rng.standard_normal(n)
        z = rng.gamma(1.0, 1.0, n)[:, None]
        c = rng.gamma(1.0, CONFOUNDER_SCALE, n)[:, None]
    mediator_design = np.column_stack([np.ones(n), x, c])
    observation_design = np.column_stack([np.ones(n), z])
    p_m = expit(mediator_design @ truth.beta)
    m_ind = rng.random(n) < p_m
    sens = expit(observation_design @ truth.gamma[0])
    if truth.specificity_fixed:
        fpr = np.zeros(n)
    else:
        fpr = expit(observation_design @ truth.gamma[1])
    p_star = np.where(m_ind, sens, fpr)
    mstar_ind = rng.random(n) < p_star
    interaction = truth.interaction
    cols = [mediator_design, m_ind.astype(float)[:, None]]
    if interaction:
        cols.append((x * m_ind)[:, None])
    eta = np.column_stack(cols) @ truth.theta
    family = SETTING_FAMILIES[spec.setting]
    if family.name == "normal":
        y = eta + np.sqrt(truth.sigma2) * rng.standard_normal(n)
    elif family.name == "bernoulli":
        y = (rng.random(n) < expit(eta)).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    dataset = MediationDataset(
        x=x, c=c, z=z, m_star=np.where(mstar_ind, 1, 2), y=y
    )
    marginals = {
        "p_m1": float(np.mean(m_ind)),
        "p_mstar1": float(np.mean(mstar_ind)),
        "avg_sensitivity": float(np.mean(sens)),
        "avg_specificity": float(np.mean(1.0 - fpr)),
    }
    true_m = np.where(m_ind, 1, 2)
    true_m.setflags(write=False)
    return DatasetRealization(dataset, true_m, truth, marginals)


@dataclass
class ReplicateResult:
    """Per-method estimates and convergence flags for one replicate."""

    replicate: int
    estimates: dict
    converged: dict
    marginals: dict


def _fit_method(method, dataset, family, interaction, fix_specificity):
    config = EmConfig(fix_specificity=fix_specificity)
    if method == "naive":
        fit = fit_naive(dataset, family, interaction)
        return {"beta": fit.beta_star, "theta": fit.theta_star}, fit.converged
    if method == "em":
        report = run_em(dataset, family, config, interaction)
    elif method == "pvw":
        report = run_pvw(dataset, family, config, interaction)
    else:
        report = run_ols_correction(dataset, config, interaction)
    return (
        {"beta": report.params.beta, "theta": report.params.theta},
        report.converged,
    )


def run_replicate(spec, methods, replicate):
    """Generate one dataset and fit every requested method to it.

    A method that raises a model error is recorded as not converged with no
    estimates rather than aborting the study.
    """
    realization = generate_dataset(spec, replicate)
    family = SETTING_FAMILIES[spec.setting]
    interaction = spec.setting in INTERACTION_SETTINGS
    fix_specificity = spec.setting == 4
    estimates = {}
    converged = {}
    for method in methods:
        try:
            estimates[method], converged[method] = _fit_method(
                method, realization.dataset, family, interaction, fix_specificity
            )
        except MedmissError:
            estimates[method] = None
            converged[method] = False
    return ReplicateResult(replicate, estimates, converged, realization.marginals)


@dataclass
class StudyCell:
    """Summary of one method's estimates of one parameter."""

    method: str
    block: str
    parameter: str
    true_value: float
    mean_estimate: float
    bias: float
    rmse: float
    convergence_rate: float
    replicates_used: int


@dataclass
class StudySummary:
    spec: ScenarioSpec
    methods: tuple
    cells: list
    marginals: dict = field(default_factory=dict)


def _parameter_names(truth):
    p = truth.beta.shape[0] - 2
    mediator = ["intercept", "x"] + ["c%d" % (j + 1) for j in range(p)]
    outcome = mediator + ["mediator"]
    if truth.interaction:
        outcome = outcome + ["x_mediator"]
    return mediator, outcome


def _validate_methods(spec, methods):
    if not methods:
        raise ConfigurationError("at least one method is required")
    seen = []
    for method in methods:
        if method not in METHODS:
            raise ConfigurationError("unknown method %r" % (method,))
        if method not in seen:
            seen.append(method)
    if "ols" in seen and spec.setting != 1:
        raise ConfigurationError(
            "the ols method assumes a Normal outcome without interaction; "
            "it is only compatible with setting 1"
        )
    return tuple(seen)


def run_study(spec, methods, workers=None):
    """Run a multi-replicate comparison of estimation methods.

    Replicates use independent RNG streams, run serially or in a process
    pool, and are aggregated in replicate-index order, so results are
    identical for a given (spec, methods) regardless of worker count.
    """
    methods = _validate_methods(spec, methods)
    if workers is None:
        workers = min(os.cpu_count() or 1, spec.replicates)
    indices = range(spec.replicates)
    if workers <= 1:
        results = [run_replicate(spec, methods, r) for r in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(partial(run_replicate, spec, methods), indices))
    truth = true_parameters(spec)
    mediator_names, outcome_names = _parameter_names(truth)
    cells = []
    for method in methods:
        ok = [res for res in results if res.estimates[method] is not None]
        rate = float(np.mean([res.converged[method] for res in results]))
        blocks = (
            ("mediator", "beta", mediator_names, truth.beta),
            ("outcome", "theta", outcome_names, truth.theta),
        )
        for block, key, names, true_vec in blocks:
            if ok:
                stacked = np.array([res.estimates[method][key] for res in ok])
            else:
                stacked = np.full((0, true_vec.shape[0]), np.nan)
            for j, name in enumerate(names):
                true_value = float(true_vec[j])
                if stacked.shape[0] > 0:
                    mean_est = float(np.mean(stacked[:, j]))
                    bias = mean_est - true_value
                    rmse = float(
                        np.sqrt(np.mean((stacked[:, j] - true_value) ** 2))
                    )
                else:
                    mean_est = float("nan")
                    bias = float("nan")
                    rmse = float("nan")
                cells.append(
                    StudyCell(
                        method=method,
                        block=block,
                        parameter=name,
                        true_value=true_value,
                        mean_estimate=mean_est,
                        bias=bias,
                        rmse=rmse,
                        convergence_rate=rate,
                        replicates_used=len(ok),
                    )
                )
    marginals = {
        key: float(np.mean([res.marginals[key] for res in results]))
        for key in results[0].marginals
    }
    return StudySummary(spec=spec, methods=methods, cells=cells, marginals=marginals)


CSV_COLUMNS = (
    "setting", "level", "n", "replicates", "seed",
    "method", "block", "parameter", "true_value", "mean_estimate",
    "bias", "rmse", "convergence_rate", "replicates_used",
)
STUDY_SCHEMA_VERSION = 1


def _json_number(value):
    return value if np.isfinite(value) else None


def emit_results(summary, path, fmt=None):
    """Write a study summary to CSV (one row per method and parameter) or JSON.

    The format comes from ``fmt`` ("csv" or "json") or, when omitted, the
    path suffix. Every row/record embeds the scenario and seed that produced
    it. The JSON schema is::

        {"schema_version": 1,
         "scenario": {"setting", "level", "n", "replicates", "seed"},
         "methods": [...],
         "marginals": {"p_m1", "p_mstar1", "avg_sensitivity",
                       "avg_specificity"},
         "cells": [{"method", "block", "parameter", "true_value",
                    "mean_estimate", "bias", "rmse", "convergence_rate",
                    "replicates_used"}, ...]}

    Non-finite numbers are written as null in JSON.
    """
    if not summary.cells:
        raise ConfigurationError("refusing to write an empty study summary")
    if fmt is None:
        suffix = os.path.splitext(str(path))[1].lower()
        fmt = {".csv": "csv", ".json": "json"}.get(suffix)
    if fmt not in ("csv", "json"):
        raise ConfigurationError("output format must be csv or json")
    spec = summary.spec
    if fmt == "csv":
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(CSV_COLUMNS)
            for cell in summary.cells:
                writer.writerow([
                    spec.setting, spec.level, spec.n, spec.replicates,
                    spec.seed, cell.method, cell.block, cell.parameter,
                    repr(cell.true_value), repr(cell.mean_estimate),
                    repr(cell.bias), repr(cell.rmse),
                    repr(cell.convergence_rate), cell.replicates_used,
                ])
        return
    payload = {
        "schema_version": STUDY_SCHEMA_VERSION,
        "scenario": {
            "setting": spec.setting,
            "level": spec.level,
            "n": spec.n,
            "replicates": spec.replicates,
            "seed": spec.seed,
        },
        "methods": list(summary.methods),
        "marginals": {k: _json_number(v) for k, v in summary.marginals.items()},
        "cells": [
            {
                "method": cell.method,
                "block": cell.block,
                "parameter": cell.parameter,
                "true_value": _json_number(cell.true_value),
                "mean_estimate": _json_number(cell.mean_estimate),
                "bias": _json_number(cell.bias),
                "rmse": _json_number(cell.rmse),
                "convergence_rate": _json_number(cell.convergence_rate),
                "replicates_used": cell.replicates_used,
            }
            for cell in summary.cells
        ],
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, allow_nan=False)
        handle.write("\n")


def parse_study_csv(path):
    """Re-read an emitted CSV back into a StudySummary (marginals excluded)."""
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise ConfigurationError("study CSV has no data rows")
    first = rows[0]
    spec = ScenarioSpec(
        setting=int(first["setting"]),
        level=first["level"],
        n=int(first["n"]),
        replicates=int(first["replicates"]),
        seed=int(first["seed"]),
    )
    methods = []
    cells = []
    for row in rows:
        if row["method"] not in methods:
            methods.append(row["method"])
        cells.append(
            StudyCell(
                method=row["method"],
                block=row["block"],
                parameter=row["parameter"],
                true_value=float(row["true_value"]),
                mean_estimate=float(row["mean_estimate"]),
                bias=float(row["bias"]),
                rmse=float(row["rmse"]),
                convergence_rate=float(row["convergence_rate"]),
                replicates_used=int(row["replicates_used"]),
            )
        )
    return StudySummary(spec=spec, methods=tuple(methods), cells=cells)
