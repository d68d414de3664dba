"""Command line front end.

Two subcommands: ``correct`` runs the correction pipeline on a CSV and prints
a text or JSON report to stdout; ``simulate`` writes a generated study as CSV
plus a ground-truth JSON sidecar. Options can come from a JSON config file
(``--config``) with individual flags overriding it. Where the error lives is
inferred from the model: naming an outcome column means the substitute is a
covariate; omitting it means the substitute is itself the outcome.

Exit codes: 0 success, 2 invalid request (bad option combinations, incompatible
method and design), 3 data problems (missing files, malformed CSV or config,
unusable columns), 4 numerical failure (singular corrections, infeasible
variances). Failures print a one-line JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .correct import correct, point_estimator
from .dataset import load_csv, write_csv
from .errormodel import n_validated
from .errors import (
    DesignError,
    InfeasibleVarianceError,
    ParseError,
    SchemaError,
    SingularError,
    SpecError,
    UnknownColumnError,
)
from .measurement import METHODS, ExternalModel, MeasurementSpec, validate_method
from .report import _plain, build_report, render_json, render_text
from .simulate import DESIGNS, Scenario, generate
from .uncertainty import stratified_bootstrap, summarize_intervals

SEED_ENV = "ERRCAL_SEED"


# ---- option plumbing ----

def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config file {path}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise SchemaError(f"config file {path}: expected a JSON object")
    return cfg


def _merged(args, keys):
    """Config-file values overridden by any flag that was actually given."""
    cfg = _load_config(args.config) if args.config else {}
    unknown = set(cfg) - set(keys)
    if unknown:
        raise SchemaError(f"config file {args.config}: unknown keys {sorted(unknown)}")
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _names(value):
    if value is None:
        return ()
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return tuple(str(v) for v in value)


def _floats(value):
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
    else:
        parts = value
    try:
        return tuple(float(v) for v in parts)
    except (TypeError, ValueError):
        raise SpecError(f"expected a list of numbers, got {value!r}") from None


def _matrix(value):
    """A covariance matrix given inline as JSON or as a path to a JSON file."""
    if value is None:
        return None
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        pass
    try:
        with open(value, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SpecError(
            f"external vcov {value!r} is neither inline JSON nor a readable file"
        ) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"external vcov file {value}: not valid JSON ({exc})") from None


def resolve_seed(value):
    """Explicit seed if given, else the ERRCAL_SEED variable, else 0."""
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SpecError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# ---- correct subcommand ----

CORRECT_KEYS = (
    "input", "outcome", "covariates", "substitute", "reference", "replicates",
    "differential_by", "external_coef", "external_vcov", "random_variance",
    "method", "B", "seed", "alpha", "fieller", "zerovar", "format", "workers",
    "internal_estimator",
)


def spec_from_config(cfg):
    """Build the measurement spec, inferring where the error lives."""
    substitute = cfg.get("substitute")
    if substitute is None:
        raise SpecError("--substitute must name the error-prone column")
    outcome = cfg.get("outcome")
    replicates = cfg.get("replicates")
    external = None
    if cfg.get("external_coef") is not None:
        vcov = _matrix(cfg.get("external_vcov"))
        external = ExternalModel(_floats(cfg["external_coef"]), vcov)
    elif cfg.get("external_vcov") is not None:
        raise SpecError("--external-vcov needs --external-coef")
    random_variance = cfg.get("random_variance")
    return MeasurementSpec(
        error_in="covariate" if outcome is not None else "outcome",
        substitute=substitute,
        outcome=outcome,
        covariates=_names(cfg.get("covariates")),
        reference=cfg.get("reference"),
        replicates=None if replicates is None else _names(replicates),
        differential_by=cfg.get("differential_by"),
        external=external,
        random_variance=None if random_variance is None else float(random_variance),
    )


def run_correct(args):
    cfg = _merged(args, CORRECT_KEYS)
    if "input" not in cfg:
        raise SpecError("--input must point to the analysis CSV")
    method = cfg.get("method", "standard")
    n_boot = int(cfg.get("B", 0))
    alpha = float(cfg.get("alpha", 0.05))
    workers = int(cfg.get("workers", 1))
    fieller = bool(cfg.get("fieller", False))
    zerovar = bool(cfg.get("zerovar", False))
    internal_estimator = cfg.get("internal_estimator", "rc")
    fmt = cfg.get("format", "text")
    if fmt not in ("text", "json"):
        raise SpecError(f"format must be 'text' or 'json', got {fmt!r}")
    seed = resolve_seed(cfg.get("seed"))

    data = load_csv(cfg["input"])
    spec = spec_from_config(cfg)
    validate_method(spec, method, n_boot=n_boot, fieller=fieller, zerovar=zerovar,
                    internal_estimator=internal_estimator)
    result = correct(data, spec, method=method, internal_estimator=internal_estimator)
    if n_boot > 0:
        boot = stratified_bootstrap(
            data, spec, point_estimator(data, spec, method, internal_estimator),
            n_boot=n_boot, seed=seed, alpha=alpha, workers=workers,
        )
        result = result.with_boot(boot)
    # Sensitivity-style corrections have no parameter covariance; fall back to
    # the known-correction intervals so the report is never bare.
    zerovar = zerovar or (result.vcov_delta is None and result.vcov_zerovar is not None)
    intervals = summarize_intervals(result, alpha=alpha, fieller=fieller, zerovar=zerovar)
    meta = {"input": str(cfg["input"]), "n_rows": data.n_rows, "n_boot": n_boot}
    if spec.has_internal_rows:
        meta["n_validated"] = int(n_validated(data, spec))
    if n_boot > 0:
        meta["seed"] = seed
    report = build_report(result, intervals, spec, meta)
    sys.stdout.write(render_json(report) if fmt == "json" else render_text(report))
    return 0


# ---- simulate subcommand ----

SCENARIO_FIELDS = tuple(f.name for f in dataclass_fields(Scenario))
SIMULATE_KEYS = SCENARIO_FIELDS + ("output", "truth", "external_output")


def run_simulate(args):
    cfg = _merged(args, SIMULATE_KEYS)
    output = cfg.pop("output", None)
    if output is None:
        raise SpecError("--output must name the CSV file to write")
    output = Path(output)
    truth_path = Path(cfg.pop("truth", output.with_suffix(".truth.json")))
    external_path = cfg.pop("external_output", None)
    if "design" not in cfg:
        raise SpecError(f"--design is required; choose one of {DESIGNS}")
    cfg["seed"] = resolve_seed(cfg.get("seed"))
    study = generate(Scenario(**cfg))

    write_csv(study.data, output)
    lines = [f"wrote {output} ({study.data.n_rows} rows)"]
    truth_path.write_text(json.dumps(_plain(study.truth), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
    lines.append(f"wrote {truth_path}")
    if study.external is not None:
        if external_path is None:
            external_path = output.with_name(output.stem + "_external" + output.suffix)
        write_csv(study.external, external_path)
        lines.append(f"wrote {external_path} ({study.external.n_rows} rows)")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ---- parser and entry points ----

def build_parser():
    parser = argparse.ArgumentParser(
        prog="errcal",
        description="Correct linear regression coefficients for measurement error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("correct", help="correct coefficients estimated from a CSV")
    c.add_argument("--config", help="JSON config file; flags below override its keys")
    c.add_argument("--input", help="analysis data CSV (header row, NA for missing)")
    c.add_argument("--outcome", help="outcome column (given: the substitute is a "
                                     "covariate; omitted: the substitute is the outcome)")
    c.add_argument("--covariates", help="comma-separated error-free covariate columns")
    c.add_argument("--substitute", help="column measured with error")
    c.add_argument("--reference", help="error-free column on the validated subset")
    c.add_argument("--replicates", help="comma-separated replicate measurement columns")
    c.add_argument("--differential-by", dest="differential_by",
                   help="binary covariate whose levels have different outcome error")
    c.add_argument("--external-coef", dest="external_coef",
                   help="comma-separated external measurement-model coefficients "
                        "(regression order: intercept first)")
    c.add_argument("--external-vcov", dest="external_vcov",
                   help="matching covariance matrix, inline JSON or a JSON file path")
    c.add_argument("--random-variance", dest="random_variance", type=float,
                   help="assumed variance of the substitute's random error")
    c.add_argument("--method", choices=METHODS)
    c.add_argument("--B", dest="B", type=int, help="bootstrap replicates (default 0)")
    c.add_argument("--seed", type=int, help=f"bootstrap seed (default ${SEED_ENV} or 0)")
    c.add_argument("--alpha", type=float, help="interval miscoverage level (default 0.05)")
    c.add_argument("--fieller", action="store_true", default=None,
                   help="add Fieller intervals for ratio coefficients")
    c.add_argument("--zerovar", action="store_true", default=None,
                   help="add intervals treating the correction as known")
    c.add_argument("--format", choices=("text", "json"))
    c.add_argument("--workers", type=int, help="bootstrap threads (does not change results)")
    c.add_argument("--internal-estimator", dest="internal_estimator", choices=("rc", "mle"),
                   help="internal estimate used by the efficient method on replicate designs")
    c.set_defaults(func=run_correct)

    s = sub.add_parser("simulate", help="write a simulated study CSV plus its ground truth")
    s.add_argument("--config", help="JSON config file with scenario fields; flags override")
    s.add_argument("--design", choices=DESIGNS)
    s.add_argument("--n", type=int, help="study size")
    s.add_argument("--n-sub", dest="n_sub", type=int, help="validated subset size")
    s.add_argument("--m", type=int, help="replicate measurements per subject")
    s.add_argument("--tau2", type=float, help="random measurement error variance")
    s.add_argument("--seed", type=int, help=f"generator seed (default ${SEED_ENV} or 0)")
    s.add_argument("--output", help="CSV path to write")
    s.add_argument("--truth", help="ground-truth sidecar path (default <output>.truth.json)")
    s.add_argument("--external-output", dest="external_output",
                   help="CSV path for the external study, when the design has one")
    s.set_defaults(func=run_simulate)
    return parser


def _fail(exc, code):
    payload = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ParseError):
        payload["row"] = exc.row
        payload["column"] = exc.column
    sys.stderr.write(json.dumps({"error": payload}, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        return _fail(exc, 2)
    except (SingularError, InfeasibleVarianceError) as exc:
        return _fail(exc, 4)
    except (SchemaError, ParseError, UnknownColumnError, DesignError) as exc:
        return _fail(exc, 3)
    except OSError as exc:
        return _fail(exc, 3)


def console_main():
    sys.exit(main())
