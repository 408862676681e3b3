"""Command-line front door: fit, effects, datagen, and simulate subcommands.

Exit codes
----------
0  success (the requested artifact was fully written)
1  model or numeric failure during estimation
2  usage or configuration error (also argparse's own code)
3  a required column is missing from the input file
4  the mediator column is not coded {1,2} or {0,1}
5  method/family or scale/family incompatibility
6  a malformed CSV data row (the message names the row)
7  the output file could not be written

Any flag may instead be supplied via ``--config FILE`` (JSON object whose
keys are the flag names without leading dashes); explicit flags win over
config-file values.
"""

import argparse
import json
import sys

import numpy as np

from . import glm, io, oracles, simulate
from .effects import SCALES, EffectQuery, compute_effects
from .em import EmConfig, e_step, run_em
from .exceptions import (
    ConfigurationError,
    MalformedRowError,
    MediatorCodingError,
    MedmissError,
    MissingColumnError,
    OutputError,
    UnsupportedFamilyError,
)
from .model import MediationDataset, ParameterSet, fit_naive
from .ols import run_ols_correction
from .pvw import run_pvw

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_CONFIG = 2
EXIT_MISSING_COLUMN = 3
EXIT_MEDIATOR_CODES = 4
EXIT_INCOMPATIBLE = 5
EXIT_MALFORMED_ROW = 6
EXIT_OUTPUT = 7

METHOD_NAMES = ("naive", "em", "pvw", "ols")
SCALE_FAMILIES = {
    "difference": "normal",
    "odds-ratio": "bernoulli",
    "risk-ratio": "poisson",
}

_REQUIRED = object()

FIT_KEYS = (
    ("input", _REQUIRED),
    ("output", _REQUIRED),
    ("method", _REQUIRED),
    ("family", _REQUIRED),
    ("x-col", _REQUIRED),
    ("c-cols", ""),
    ("z-cols", ""),
    ("mstar-col", _REQUIRED),
    ("y-col", _REQUIRED),
    ("interaction", False),
    ("fix-specificity", False),
    ("tol", 1e-7),
    ("max-iter", 1500),
    ("no-accel", False),
    ("seed", None),
)
EFFECTS_KEYS = (
    ("input", _REQUIRED),
    ("output", _REQUIRED),
    ("scale", _REQUIRED),
    ("x", _REQUIRED),
    ("xref", _REQUIRED),
    ("c", ""),
    ("m", 0),
)
DATAGEN_KEYS = (
    ("output", _REQUIRED),
    ("setting", _REQUIRED),
    ("level", _REQUIRED),
    ("n", None),
    ("seed", 0),
    ("reveal-truth", False),
)
SIMULATE_KEYS = (
    ("output", _REQUIRED),
    ("setting", _REQUIRED),
    ("level", _REQUIRED),
    ("n", None),
    ("replicates", 500),
    ("seed", 0),
    ("methods", ""),
    ("workers", None),
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="medmiss",
        description="Mediation analysis with a misclassified binary mediator.",
    )
    parser.add_argument(
        "--self-check", action="store_true",
        help="run the built-in oracle suite and exit",
    )
    sub = parser.add_subparsers(dest="command")

    fit = sub.add_parser("fit", help="fit the model to a CSV file")
    fit.add_argument("--input")
    fit.add_argument("--output")
    fit.add_argument("--method", choices=METHOD_NAMES)
    fit.add_argument("--family", choices=("normal", "bernoulli", "poisson"))
    fit.add_argument("--x-col")
    fit.add_argument("--c-cols", help="comma-separated confounder columns")
    fit.add_argument("--z-cols",
                     help="comma-separated misclassification covariate columns")
    fit.add_argument("--mstar-col")
    fit.add_argument("--y-col")
    fit.add_argument("--interaction", action="store_true", default=None)
    fit.add_argument("--fix-specificity", action="store_true", default=None,
                     help="constrain P(M*=1 | M=2) = 0")
    fit.add_argument("--tol", type=float)
    fit.add_argument("--max-iter", type=int)
    fit.add_argument("--no-accel", action="store_true", default=None)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--config")

    effects = sub.add_parser("effects",
                             help="causal effects from a saved fit report")
    effects.add_argument("--input", help="fit report JSON")
    effects.add_argument("--output")
    effects.add_argument("--scale", choices=SCALES)
    effects.add_argument("--x", type=float)
    effects.add_argument("--xref", type=float)
    effects.add_argument("--c", help="comma-separated confounder values")
    effects.add_argument("--m", type=int, help="mediator level for the CDE")
    effects.add_argument("--config")

    datagen = sub.add_parser("datagen", help="write one synthetic dataset")
    datagen.add_argument("--output")
    datagen.add_argument("--setting", type=int)
    datagen.add_argument("--level", choices=simulate.LEVELS)
    datagen.add_argument("--n", type=int)
    datagen.add_argument("--seed", type=int)
    datagen.add_argument("--reveal-truth", action="store_true", default=None)
    datagen.add_argument("--config")

    sim = sub.add_parser("simulate", help="run a multi-replicate study")
    sim.add_argument("--output")
    sim.add_argument("--setting", type=int)
    sim.add_argument("--level", choices=simulate.LEVELS)
    sim.add_argument("--n", type=int)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--methods", help="comma-separated subset of %s" % (METHOD_NAMES,))
    sim.add_argument("--workers", type=int)
    sim.add_argument("--config")

    return parser


def _resolve(args, keys):
    """Merge argparse values over config-file values over defaults."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config) as handle:
            config = json.load(handle)
        if not isinstance(config, dict):
            raise ConfigurationError("config file must hold a JSON object")
        known = {key for key, _ in keys}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigurationError(
                "unknown config key(s): %s" % ", ".join(unknown)
            )
    resolved = {}
    for key, default in keys:
        value = getattr(args, key.replace("-", "_"))
        if value is None:
            value = config.get(key, default)
        if value is _REQUIRED:
            raise ConfigurationError("--%s is required" % key)
        resolved[key] = value
    return resolved


def _name_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    value = str(value).strip()
    if not value:
        return []
    return [part.strip() for part in value.split(",")]


def _float_list(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    value = str(value).strip()
    if not value:
        return []
    try:
        return [float(part) for part in value.split(",")]
    except ValueError:
        raise ConfigurationError("expected comma-separated numbers, got %r" % value)


def _write(write_fn, *args, **kwargs):
    try:
        write_fn(*args, **kwargs)
    except OSError as exc:
        raise OutputError("cannot write output: %s" % exc)


def cmd_fit(args):
    cfg = _resolve(args, FIT_KEYS)
    family = glm.family_by_name(cfg["family"])
    method = cfg["method"]
    if method not in METHOD_NAMES:
        raise ConfigurationError("method must be one of %s" % (METHOD_NAMES,))
    if method == "ols" and family.name != "normal":
        raise UnsupportedFamilyError(
            "the ols method requires the normal family; got %s" % family.name
        )
    dataset, ingestion = io.load_dataset(
        cfg["input"],
        cfg["x-col"],
        _name_list(cfg["c-cols"]),
        _name_list(cfg["z-cols"]),
        cfg["mstar-col"],
        cfg["y-col"],
    )
    interaction = bool(cfg["interaction"])
    em_config = EmConfig(
        loglik_tolerance=float(cfg["tol"]),
        max_iterations=int(cfg["max-iter"]),
        acceleration="none" if cfg["no-accel"] else "squarem",
        seed=None if cfg["seed"] is None else int(cfg["seed"]),
        fix_specificity=bool(cfg["fix-specificity"]),
    )
    echo = dict(cfg)
    echo["ingestion"] = ingestion
    if method == "naive":
        fit = fit_naive(dataset, family, interaction)
        payload = io.fit_report_payload("naive", family, dataset, echo, naive=fit)
    else:
        if method == "em":
            report = run_em(dataset, family, em_config, interaction)
        elif method == "pvw":
            report = run_pvw(dataset, family, em_config, interaction)
        else:
            report = run_ols_correction(dataset, em_config, interaction)
        payload = io.fit_report_payload(method, family, dataset, echo, report=report)
    _write(io.write_json, cfg["output"], payload)
    return EXIT_OK


def cmd_effects(args):
    cfg = _resolve(args, EFFECTS_KEYS)
    scale = cfg["scale"]
    if scale not in SCALES:
        raise ConfigurationError("scale must be one of %s" % (SCALES,))
    fit_info = io.load_fit_report(cfg["input"])
    required_family = SCALE_FAMILIES[scale]
    if fit_info["family"] != required_family:
        raise UnsupportedFamilyError(
            "the %s scale requires a %s-family fit; %r holds a %s fit"
            % (scale, required_family, cfg["input"], fit_info["family"])
        )
    beta = fit_info["beta"]
    p = beta.shape[0] - 2
    c_values = _float_list(cfg["c"])
    if not c_values:
        c_values = [0.0] * p
    if len(c_values) != p:
        raise ConfigurationError(
            "--c needs %d value(s) to match the fitted confounders" % p
        )
    gamma = fit_info["gamma"]
    if gamma is None:
        gamma = np.zeros((2, 1))
    params = ParameterSet(
        beta=beta,
        gamma=gamma,
        theta=fit_info["theta"],
        sigma2=fit_info["sigma2"],
        interaction=fit_info["interaction"],
        specificity_fixed=fit_info["specificity_fixed"],
    )
    query = EffectQuery(
        x=float(cfg["x"]),
        x_ref=float(cfg["xref"]),
        c=np.array(c_values),
        m=int(cfg["m"]),
        scale=scale,
    )
    estimates = compute_effects(params, query)
    source = {
        "path": str(cfg["input"]),
        "method": fit_info["method"],
        "family": fit_info["family"],
    }
    _write(io.write_json, cfg["output"], io.effects_payload(estimates, query, source))
    return EXIT_OK


def cmd_datagen(args):
    cfg = _resolve(args, DATAGEN_KEYS)
    spec = simulate.ScenarioSpec(
        setting=int(cfg["setting"]),
        level=cfg["level"],
        n=None if cfg["n"] is None else int(cfg["n"]),
        replicates=1,
        seed=int(cfg["seed"]),
    )
    realization = simulate.generate_dataset(spec, replicate=0)
    true_m = realization.true_m if cfg["reveal-truth"] else None
    _write(io.write_dataset_csv, cfg["output"], realization.dataset, true_m)
    return EXIT_OK


def cmd_simulate(args):
    cfg = _resolve(args, SIMULATE_KEYS)
    spec = simulate.ScenarioSpec(
        setting=int(cfg["setting"]),
        level=cfg["level"],
        n=None if cfg["n"] is None else int(cfg["n"]),
        replicates=int(cfg["replicates"]),
        seed=int(cfg["seed"]),
    )
    methods = _name_list(cfg["methods"])
    if not methods:
        methods = ["naive", "em", "pvw"]
        if spec.setting == 1:
            methods.append("ols")
    workers = None if cfg["workers"] is None else int(cfg["workers"])
    summary = simulate.run_study(spec, methods, workers=workers)
    _write(simulate.emit_results, summary, cfg["output"])
    return EXIT_OK


def _check_posterior():
    rng = np.random.Generator(np.random.Philox(11))
    n = 12
    dataset = MediationDataset(
        x=rng.standard_normal(n),
        c=rng.standard_normal(n),
        z=rng.standard_normal(n),
        m_star=rng.integers(1, 3, size=n),
        y=rng.standard_normal(n),
    )
    params = ParameterSet(
        beta=np.array([0.3, -0.8, 0.5]),
        gamma=np.array([[2.0, 0.4], [-1.5, 0.3]]),
        theta=np.array([0.2, 1.0, -0.4, -1.2]),
        sigma2=1.3,
    )
    fast = e_step(params, dataset, glm.NORMAL).r
    slow = oracles.brute_force_posterior(params, dataset, glm.NORMAL).r
    gap = float(np.max(np.abs(fast - slow)))
    return "posterior-enumeration", gap < 1e-10, "max difference %.3g" % gap


def _check_newton():
    rng = np.random.Generator(np.random.Philox(12))
    design = np.column_stack([np.ones(60), rng.standard_normal((60, 2))])
    coef = np.array([0.4, -0.7, 0.3])
    worst = 0.0
    for family, y in (
        (glm.NORMAL, design @ coef + rng.standard_normal(60)),
        (glm.BERNOULLI,
         (rng.random(60) < 1.0 / (1.0 + np.exp(-design @ coef))).astype(float)),
        (glm.POISSON, rng.poisson(np.exp(design @ coef)).astype(float)),
    ):
        weights = rng.uniform(0.5, 1.5, 60)
        fit = glm.fit_weighted_glm(design, y, weights, family)
        ref = oracles.independent_newton_glm(design, y, weights, family)
        worst = max(worst, float(np.max(np.abs(fit.coefficients - ref))))
    return "newton-glm", worst < 1e-8, "max difference %.3g" % worst


def _check_effects():
    params = ParameterSet(
        beta=np.array([0.5, -1.0, 0.3]),
        gamma=np.array([[2.0, 0.5], [-2.0, 0.5]]),
        theta=np.array([1.0, 1.5, -0.2, -2.0]),
        sigma2=1.0,
    )
    query = EffectQuery(x=1.0, x_ref=0.0, c=np.array([0.5]), scale="difference")
    closed = compute_effects(params, query)
    mc = oracles.monte_carlo_effects(params, query, glm.NORMAL,
                                     draws=2 * 10 ** 5, seed=5)
    ok = mc.consistent_with(closed, k=4.0)
    return "monte-carlo-effects", ok, "CDE/NDE/NIE within 4 standard errors"


def run_self_check():
    """Run the oracle suite; print one line per check; 0 iff all pass."""
    failures = 0
    for check in (_check_posterior, _check_newton, _check_effects):
        name, passed, detail = check()
        status = "ok" if passed else "FAIL"
        print("self-check %s: %s (%s)" % (name, status, detail))
        if not passed:
            failures += 1
    return EXIT_OK if failures == 0 else EXIT_MODEL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.self_check:
            return run_self_check()
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        handler = {
            "fit": cmd_fit,
            "effects": cmd_effects,
            "datagen": cmd_datagen,
            "simulate": cmd_simulate,
        }[args.command]
        return handler(args)
    except MissingColumnError as exc:
        return _fail(exc, EXIT_MISSING_COLUMN)
    except MediatorCodingError as exc:
        return _fail(exc, EXIT_MEDIATOR_CODES)
    except MalformedRowError as exc:
        return _fail(exc, EXIT_MALFORMED_ROW)
    except UnsupportedFamilyError as exc:
        return _fail(exc, EXIT_INCOMPATIBLE)
    except OutputError as exc:
        return _fail(exc, EXIT_OUTPUT)
    except ConfigurationError as exc:
        return _fail(exc, EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail(exc, EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        return _fail(exc, EXIT_CONFIG)
    except MedmissError as exc:
        return _fail(exc, EXIT_MODEL)


def _fail(exc, code):
    print("medmiss: error: %s" % exc, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
