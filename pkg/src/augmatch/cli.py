"""Command-line front end: ``augmatch estimate | simulate | releff``.

Exit codes are 0 on success, 2 on invalid input or flags and 3 on a
numerical failure. Failures print a JSON error object on stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analytic import AnalyticDesign, relative_efficiency
from .data import DataError, load_csv
from .logit import LogitError
from .matching import MatchingError
from .nuisance import NuisanceError
from .pipeline import EstimatorConfig, estimate_augmented, estimate_unaugmented
from .simulate import SCHEMA_VERSION, McError, Scenario, TABLE1, run_mc, write_replications
from .variance import VarianceError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, output) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _grid(spec: str) -> np.ndarray:
    """Parse ``start:stop:step`` into an inclusive grid."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise UsageError(f"grid must be start:stop:step, got {spec!r}") from None
    if not all(math.isfinite(x) for x in (start, stop, step)) or step <= 0 or stop < start:
        raise UsageError(f"invalid grid {spec!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    # round away accumulated float noise in the step multiples
    return np.round(start + step * np.arange(count), 12)


def _finite(name, value):
    if value is not None and not math.isfinite(value):
        raise UsageError(f"--{name} must be finite")


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.threads
    env = os.environ.get("AUGMATCH_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"AUGMATCH_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise UsageError("AUGMATCH_THREADS must be at least 1")
        return value
    return 1


def _config(args, split_default: float) -> EstimatorConfig:
    split = split_default if args.split is None else args.split
    try:
        return EstimatorConfig(
            m=args.matches, disc_k=args.disc_k, split_frac=split, level=args.level, seed=args.seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_estimator_flags(p, split_help):
    p.add_argument("--matches", type=int, default=1, help="matches per unit M (default 1)")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True,
                   help="augment the propensity model with the estimated optimal covariate")
    p.add_argument("--split", type=float, default=None, help=split_help)
    p.add_argument("--disc-k", type=float, default=None, help="discretize the MLE on a 1/(k sqrt n) grid")
    p.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="augmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate the ATE from a CSV file")
    est.add_argument("--input", required=True)
    est.add_argument("--treatment", default="a", help="treatment column (default a)")
    est.add_argument("--outcome", default="y", help="outcome column (default y)")
    est.add_argument("--covariates", default=None, help="comma-separated covariate columns")
    _add_estimator_flags(est, "fraction of units used to learn the augmentation (default 0.05)")

    sim = sub.add_parser("simulate", help="Monte Carlo study on a simulation scenario")
    sim.add_argument("--scenario", required=True, help="1-4, or 'analytic' for the Gaussian design")
    sim.add_argument("--n", type=int, default=2000)
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--threads", type=int, default=None)
    _add_estimator_flags(sim, "sample-split fraction for the augmented estimator (default 0)")
    for name in ("theta0", "theta1", "beta1", "beta2", "gamma1", "sigma"):
        sim.add_argument(f"--{name}", type=float, default=None, help="Gaussian-design override")

    rel = sub.add_parser("releff", help="analytic relative efficiency in the Gaussian design")
    rel.add_argument("--theta1", type=float, default=1.0)
    rel.add_argument("--beta2", type=float, default=1.0, help="standardized precision coefficient")
    rel.add_argument("--beta1", type=float, default=1.0)
    rel.add_argument("--gamma1", type=float, default=1.0)
    rel.add_argument("--theta0", type=float, default=0.0)
    rel.add_argument("--m", type=int, default=1)
    rel.add_argument("--theta1-grid", default=None, help="sweep theta1 over start:stop:step")
    rel.add_argument("--beta2-grid", default=None, help="sweep beta2 over start:stop:step")
    rel.add_argument("--format", choices=("json", "csv"), default="json")
    rel.add_argument("--output", default=None)
    return parser


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if x is None else repr(float(x)) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def cmd_estimate(args) -> int:
    cfg = _config(args, 0.05)
    schema = {"treatment": args.treatment, "outcome": args.outcome}
    if args.covariates:
        schema["covariates"] = [c.strip() for c in args.covariates.split(",") if c.strip()]
    d = load_csv(args.input, schema)
    res = estimate_augmented(d, cfg) if args.augment else estimate_unaugmented(d, cfg)
    out = {"schema_version": SCHEMA_VERSION, "n": d.n, "matches": cfg.m, **res.as_dict()}
    if args.format == "json":
        _emit(dumps(out), args.output)
    else:
        v = res.variance
        header = ["psi", "se", "ci_lo", "ci_hi", "gain", "sigma2_M", "sigma2_adj", "sigma2_np", "delta_M", "n_eff"]
        row = [res.psi, res.se, *res.ci, v.gain, v.sigma2_M, v.sigma2_adj, v.sigma2_np, v.delta_M, v.n_eff]
        _emit(_csv_text(header, [_clean(row)]), args.output)
    return EXIT_OK


def _scenario(args) -> Scenario:
    overrides = {k: getattr(args, k) for k in ("theta0", "theta1", "beta1", "beta2", "gamma1", "sigma")}
    for k, v in overrides.items():
        _finite(k, v)
    if args.scenario == "analytic":
        base = AnalyticDesign()
        b0, b1, b2 = base.beta
        g0, g1, g2 = base.gamma
        b1 = overrides["beta1"] if overrides["beta1"] is not None else b1
        b2 = overrides["beta2"] if overrides["beta2"] is not None else b2
        g1 = overrides["gamma1"] if overrides["gamma1"] is not None else g1
        try:
            design = AnalyticDesign(
                theta0=base.theta0 if overrides["theta0"] is None else overrides["theta0"],
                theta1=base.theta1 if overrides["theta1"] is None else overrides["theta1"],
                beta=(b0, b1, b2),
                gamma=(g0, g1, b2),
                sigma=base.sigma if overrides["sigma"] is None else overrides["sigma"],
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return Scenario("analytic", design)
    if any(v is not None for v in overrides.values()):
        raise UsageError("parameter overrides apply to --scenario analytic only")
    try:
        sid = int(args.scenario)
    except ValueError:
        sid = None
    if sid not in TABLE1:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose 1-4 or 'analytic'")
    return Scenario(sid)


def cmd_simulate(args) -> int:
    s = _scenario(args)
    if args.n < 20:
        raise UsageError("--n must be at least 20")
    if args.reps < 2:
        raise UsageError("--reps must be at least 2")
    cfg = _config(args, 0.0)
    threads = _threads(args)
    estimators = ("unaugmented", "augmented") if args.augment else ("unaugmented",)
    run = run_mc(s, args.n, args.reps, cfg, seed=args.seed, estimators=estimators, threads=threads)
    if args.output is None:
        if args.format == "json":
            _emit(dumps(run.summary_dict()), None)
        else:
            write_replications(run, sys.stdout)
        return EXIT_OK
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_replications(run, out / "replications.csv")
    _emit(dumps(run.summary_dict()), out / "summary.json")
    return EXIT_OK


def cmd_releff(args) -> int:
    for name in ("theta1", "beta2", "beta1", "gamma1", "theta0"):
        _finite(name, getattr(args, name))
    if args.m < 1:
        raise UsageError("--m must be at least 1")
    if args.theta1_grid and args.beta2_grid:
        raise UsageError("sweep over at most one grid")

    def re(theta1, beta2):
        return relative_efficiency(theta1, beta2, args.beta1, args.gamma1, args.theta0, args.m)

    params = {"beta1": args.beta1, "gamma1": args.gamma1, "theta0": args.theta0, "m": args.m}
    if args.theta1_grid or args.beta2_grid:
        if args.theta1_grid:
            rows = [(float(t), args.beta2, re(float(t), args.beta2)) for t in _grid(args.theta1_grid)]
        else:
            rows = [(args.theta1, float(b), re(args.theta1, float(b))) for b in _grid(args.beta2_grid)]
        if args.format == "csv":
            _emit(_csv_text(["theta1", "beta2", "re"], rows), args.output)
        else:
            table = [{"theta1": t, "beta2": b, "re": r} for t, b, r in rows]
            _emit(dumps({"schema_version": SCHEMA_VERSION, **params, "table": table}), args.output)
        return EXIT_OK
    value = re(args.theta1, args.beta2)
    if args.format == "csv":
        _emit(_csv_text(["theta1", "beta2", "re"], [(args.theta1, args.beta2, value)]), args.output)
    else:
        out = {"schema_version": SCHEMA_VERSION, **params, "theta1": args.theta1, "beta2": args.beta2, "re": value}
        _emit(dumps(out), args.output)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "releff": cmd_releff}

VALIDATION_ERRORS = (UsageError, DataError, MatchingError, FileNotFoundError, IsADirectoryError, ValueError)
NUMERICAL_ERRORS = (LogitError, NuisanceError, VarianceError, McError, np.linalg.LinAlgError, FloatingPointError)


def _fail(kind: str, exc: BaseException, code: int) -> int:
    err = {"schema_version": SCHEMA_VERSION, "error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}
    sys.stdout.write(dumps(err))
    return code


GRID_FLAGS = ("--theta1-grid", "--beta2-grid")


def _join_grid_values(argv):
    # grids such as "-3:3:0.1" start with a dash and would read as options
    out, it = [], iter(argv)
    for tok in it:
        if tok in GRID_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(_join_grid_values(argv))
        return COMMANDS[args.command](args)
    except NUMERICAL_ERRORS as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except VALIDATION_ERRORS as exc:
        return _fail("validation", exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
