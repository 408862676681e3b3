"""CSV ingestion, dataset export, and JSON report serialization.

The JSON writers encode non-finite floats as the strings "inf", "-inf", and
"nan" so files stay valid JSON; the readers reverse that encoding.
"""

import csv
import json

import numpy as np

from .exceptions import (
    ConfigurationError,
    MalformedRowError,
    MediatorCodingError,
    MissingColumnError,
)
from .model import MediationDataset

FIT_REPORT_SCHEMA_VERSION = 1
EFFECTS_SCHEMA_VERSION = 1


def _validate_roles(x_col, c_cols, z_cols, mstar_col, y_col):
    singles = [x_col, mstar_col, y_col]
    if len(set(singles)) != 3:
        raise ConfigurationError("x, mediator, and outcome columns must differ")
    if len(set(c_cols)) != len(c_cols):
        raise ConfigurationError("duplicate confounder columns")
    if len(set(z_cols)) != len(z_cols):
        raise ConfigurationError("duplicate misclassification covariate columns")
    # Z may reuse confounder columns; no other role overlap is meaningful.
    for name in singles:
        if name in c_cols or name in z_cols:
            raise ConfigurationError(
                "column %r cannot serve two roles" % (name,)
            )


def load_dataset(path, x_col, c_cols, z_cols, mstar_col, y_col):
    """Read a CSV into a MediationDataset using the given column roles.

    The mediator column may be coded {1, 2} (2 = reference) or {0, 1};
    {0, 1} is recoded as 1 -> 1, 0 -> 2 and the recode is noted in the
    returned metadata. Returns (dataset, metadata).
    """
    c_cols = list(c_cols)
    z_cols = list(z_cols)
    _validate_roles(x_col, c_cols, z_cols, mstar_col, y_col)
    needed = [x_col] + c_cols + z_cols + [mstar_col, y_col]
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for name in needed:
            if name not in header:
                raise MissingColumnError(
                    "required column %r not found in input (header: %s)"
                    % (name, ", ".join(header))
                )
        rows = {name: [] for name in set(needed)}
        for index, row in enumerate(reader, start=1):
            for name in rows:
                raw = row.get(name)
                if raw is None or raw.strip() == "":
                    raise MalformedRowError(index, "missing value in %r" % name)
                try:
                    rows[name].append(float(raw))
                except ValueError:
                    raise MalformedRowError(
                        index, "value %r in %r is not numeric" % (raw, name)
                    )
    if not rows[x_col]:
        raise ConfigurationError("input file has no data rows")
    n = len(rows[x_col])
    mstar_raw = np.array(rows[mstar_col])
    if np.any(mstar_raw != np.round(mstar_raw)):
        raise MediatorCodingError(
            "mediator column %r has non-integer values" % mstar_col
        )
    codes = set(np.unique(mstar_raw).astype(int).tolist())
    if codes <= {1, 2}:
        m_star = mstar_raw.astype(int)
        recoded = False
    elif codes <= {0, 1}:
        m_star = np.where(mstar_raw == 1, 1, 2)
        recoded = True
    else:
        raise MediatorCodingError(
            "mediator column %r must be coded {1,2} or {0,1}; found %s"
            % (mstar_col, sorted(codes))
        )
    def stack(names):
        if not names:
            return np.empty((n, 0))
        return np.column_stack([rows[name] for name in names])
    dataset = MediationDataset(
        x=np.array(rows[x_col]),
        c=stack(c_cols),
        z=stack(z_cols),
        m_star=m_star,
        y=np.array(rows[y_col]),
    )
    metadata = {
        "path": str(path),
        "n": n,
        "columns": {
            "x": x_col, "c": c_cols, "z": z_cols,
            "mstar": mstar_col, "y": y_col,
        },
        "mediator_recoded_from_01": recoded,
    }
    return dataset, metadata


def write_dataset_csv(path, dataset, true_m=None):
    """Write a dataset as CSV with columns x, c*, z*, mstar, y (+ true_m)."""
    header = (
        ["x"]
        + ["c%d" % (j + 1) for j in range(dataset.n_confounders)]
        + ["z%d" % (j + 1) for j in range(dataset.n_misclass_covariates)]
        + ["mstar", "y"]
    )
    if true_m is not None:
        header.append("true_m")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(dataset.x[i]))]
            row += [repr(float(v)) for v in dataset.c[i]]
            row += [repr(float(v)) for v in dataset.z[i]]
            row += [int(dataset.m_star[i]), repr(float(dataset.y[i]))]
            if true_m is not None:
                row.append(int(true_m[i]))
            writer.writerow(row)


def _encode(value):
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_encode(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if np.isfinite(value):
            return value
        if np.isnan(value):
            return "nan"
        return "inf" if value > 0 else "-inf"
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _decode_floats(value):
    if isinstance(value, list):
        return [_decode_floats(v) for v in value]
    if value in ("inf", "-inf", "nan"):
        return float(value)
    return value


def write_json(path, payload):
    with open(path, "w") as handle:
        json.dump(_encode(payload), handle, indent=2, allow_nan=False)
        handle.write("\n")


def _named(names, values):
    return {name: values[j] for j, name in enumerate(names)}


def fit_report_payload(method, family, dataset, config_echo,
                       naive=None, report=None):
    """Assemble the fit-report JSON payload for either kind of fit.

    Exactly one of ``naive`` (a NaiveFit) or ``report`` (a FitReport) must be
    given. Naive reports carry no observation model and no sensitivity or
    specificity entries.
    """
    if (naive is None) == (report is None):
        raise ConfigurationError("exactly one fit object is required")
    if naive is not None:
        interaction = naive.interaction
        payload = {
            "schema_version": FIT_REPORT_SCHEMA_VERSION,
            "method": method,
            "family": family.name,
            "interaction": interaction,
            "converged": naive.converged,
            "estimates": {
                "mediator": _named(
                    dataset.mediator_column_names(), naive.beta_star
                ),
                "outcome": _named(
                    dataset.outcome_column_names(interaction), naive.theta_star
                ),
                "sigma2": naive.sigma2_star,
            },
            "parameters": {
                "beta": naive.beta_star,
                "gamma": None,
                "theta": naive.theta_star,
                "sigma2": naive.sigma2_star,
            },
            "specificity_fixed": False,
            "config": config_echo,
        }
        return payload
    params = report.params
    interaction = params.interaction
    obs_names = dataset.observation_column_names()
    trace = list(report.loglik_trace)
    payload = {
        "schema_version": FIT_REPORT_SCHEMA_VERSION,
        "method": method,
        "family": family.name,
        "interaction": interaction,
        "converged": report.converged,
        "iterations": report.iterations,
        "estimates": {
            "mediator": _named(dataset.mediator_column_names(), params.beta),
            "observation": {
                "sensitivity": _named(obs_names, params.gamma[0]),
                "false_positive": _named(obs_names, params.gamma[1]),
            },
            "outcome": _named(
                dataset.outcome_column_names(interaction), params.theta
            ),
            "sigma2": params.sigma2,
        },
        "parameters": {
            "beta": params.beta,
            "gamma": params.gamma,
            "theta": params.theta,
            "sigma2": params.sigma2,
        },
        "average_sensitivity": report.avg_sensitivity,
        "average_specificity": report.avg_specificity,
        "label_swap_applied": report.label_swap_applied,
        "specificity_fixed": params.specificity_fixed,
        "loglik_trace": {
            "first": trace[0] if trace else None,
            "last": trace[-1] if trace else None,
            "length": len(trace),
        },
        "metadata": report.metadata,
        "config": config_echo,
    }
    return payload


def load_fit_report(path):
    """Read a fit-report JSON back into plain parameter arrays.

    Returns a dict with keys method, family, interaction, specificity_fixed,
    beta, gamma (None for naive fits), theta, sigma2.
    """
    with open(path) as handle:
        payload = json.load(handle)
    for key in ("family", "parameters"):
        if key not in payload:
            raise ConfigurationError(
                "%r does not look like a fit report (missing %r)" % (path, key)
            )
    raw = payload["parameters"]
    gamma = raw.get("gamma")
    return {
        "method": payload.get("method"),
        "family": payload["family"],
        "interaction": bool(payload.get("interaction", False)),
        "specificity_fixed": bool(payload.get("specificity_fixed", False)),
        "beta": np.array(_decode_floats(raw["beta"]), dtype=float),
        "gamma": None if gamma is None
        else np.array(_decode_floats(gamma), dtype=float),
        "theta": np.array(_decode_floats(raw["theta"]), dtype=float),
        "sigma2": raw.get("sigma2"),
    }


def effects_payload(estimates, query, source):
    """Assemble the effects JSON payload with the query echoed in full."""
    return {
        "schema_version": EFFECTS_SCHEMA_VERSION,
        "scale": estimates.scale,
        "effects": {
            "cde": estimates.cde,
            "nde": estimates.nde,
            "nie": estimates.nie,
        },
        "query": {
            "x": query.x,
            "xref": query.x_ref,
            "c": list(np.asarray(query.c, dtype=float)),
            "m": query.m,
            "scale": query.scale,
        },
        "source": source,
    }
