"""Command-line interface: ``mephd <subcommand> ...``.

Exit status is 0 on success, 2 for usage or input errors and 3 when a
solver fails (NotConverged, NoFeasibleTheta, ...); in the latter case a JSON
error object is printed on stdout.

Defaults
--------
=====================  ========
``--alpha``            0.05
``--level``            0.95
``--grad-tol``         1e-10
``--max-iter``         100
``--jobs``             1
``--seed``             20240611 (``MEPHD_SEED`` wins when set)
=====================  ========
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .divergence import divergence_from_name
from .dual import SolverConfig, feasibility_probe, solve_inner
from .errors import (
    DegreesOfFreedomError,
    DimensionMismatch,
    DomainError,
    MephdError,
    NoFeasibleTheta,
    NoInteriorPoint,
    NotConverged,
    ParseError,
    SingularHessian,
    SingularMatrix,
    UnknownDivergence,
    UnknownModel,
)
from .estimator import cdf_estimate, estimate
from .inference import (
    composite_test,
    confidence_region,
    fix_coordinate,
    model_test,
    simple_test,
)
from .model import available_models, builtin_model, load_sample
from .montecarlo import BUILTIN_SCENARIOS, ScenarioConfig, builtin_scenario, run_scenario
from .primal import primal_project

__all__ = ["main", "run", "build_parser"]

_SOLVER_ERRORS = (NotConverged, NoFeasibleTheta, SingularHessian, SingularMatrix, NoInteriorPoint)
_INPUT_ERRORS = (ParseError, DimensionMismatch, UnknownModel, UnknownDivergence, DomainError,
                 DegreesOfFreedomError, OSError, ValueError)


class _UsageError(Exception):
    pass


# -- output helpers ---------------------------------------------------------


def _clean(obj):
    """Make ``obj`` JSON-safe: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj):
    # json uses repr for floats: shortest string that round-trips exactly
    return json.dumps(_clean(obj), indent=2, allow_nan=False)


def _emit(args, obj):
    text = _dump(obj)
    out = getattr(args, "out", None)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _emit_text(args, text):
    out = getattr(args, "out", None)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- argument parsing -------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _probability(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def _grid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like lo:hi:steps")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse grid {text!r}")
    if not hi > lo or steps < 2:
        raise argparse.ArgumentTypeError("grid needs hi > lo and steps >= 2")
    return lo, hi, steps


def _fix(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected name=value, e.g. mu=1")
    name, value = text.split("=", 1)
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse value in {text!r}")


def _add_data(p, theta=False, theta_required=True):
    p.add_argument("--data", required=True, help="CSV file, one observation per row")
    p.add_argument("--model", required=True, help=f"builtin model: {', '.join(available_models())}")
    p.add_argument("--divergence", required=True,
                   help="chi2m, klm, hellinger, kl, chi2 or power:<gamma>")
    if theta:
        p.add_argument("--theta", type=_floats, required=theta_required,
                       help="comma-separated parameter value")
    p.add_argument("--grad-tol", type=float, default=1e-10, help="dual gradient tolerance")
    p.add_argument("--max-iter", type=int, default=100, help="dual Newton iteration cap")
    p.add_argument("--out", help="write the output to this file instead of stdout")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mephd",
        description="Minimum empirical phi-divergence estimation and tests for moment models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    p = sub.add_parser("estimate", help="estimate theta and the plug-in variances")
    _add_data(p)
    p.add_argument("--theta-init", type=_floats, help="starting value (d >= 2) / extra grid point")
    p.add_argument("--misspec", action="store_true", help="also report the sandwich covariance")

    p = sub.add_parser("project", help="project the empirical measure on M_theta")
    _add_data(p, theta=True)

    p = sub.add_parser("verify", help="compare the dual projection with the primal solver")
    _add_data(p, theta=True)

    p = sub.add_parser("test-model", help="overidentification test of the model")
    _add_data(p)
    p.add_argument("--alpha", type=_probability, default=0.05)

    p = sub.add_parser("test-point", help="test theta = theta1")
    _add_data(p, theta=True)
    p.add_argument("--alpha", type=_probability, default=0.05)

    p = sub.add_parser("test-composite", help="test one coordinate fixed, e.g. --fix mu=1")
    _add_data(p)
    p.add_argument("--fix", type=_fix, required=True, help="name=value (normal2: mu or v)")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--raw-statistic", action="store_true",
                   help="report the divergence difference without the 2n factor")

    p = sub.add_parser("cr", help="confidence region from the fit statistic")
    _add_data(p)
    p.add_argument("--level", type=_probability, default=0.95)
    p.add_argument("--grid", type=_grid, action="append", required=True,
                   help="lo:hi:steps, once per coordinate")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("cdf", help="weighted distribution function estimate (CSV)")
    _add_data(p)
    p.add_argument("--at", type=_floats, required=True, help="comma-separated points")
    p.add_argument("--monotone", action="store_true", help="apply a running maximum")

    p = sub.add_parser("simulate", help="Monte Carlo tables for the builtin scenarios")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", choices=sorted(BUILTIN_SCENARIOS))
    group.add_argument("--config", help="JSON file with a custom scenario")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--divergences", help="comma-separated divergence names")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", action="store_true", help="emit the table as CSV")
    p.add_argument("--out")
    return parser


# -- subcommands ------------------------------------------------------------


def _setup(args):
    model = builtin_model(args.model)
    spec = divergence_from_name(args.divergence)
    sample = load_sample(args.data, model.obs_dim)
    config = SolverConfig(grad_tol=args.grad_tol, max_iter=args.max_iter)
    return model, spec, sample, config


def _theta(args, model):
    theta = np.asarray(args.theta, dtype=float)
    if theta.size != model.d:
        raise _UsageError(f"--theta needs {model.d} value(s) for model {model.name}")
    return theta


def _cmd_estimate(args):
    model, spec, sample, config = _setup(args)
    res = estimate(model, spec, sample, config, theta_init=args.theta_init, misspec=args.misspec)
    _emit(args, res.to_dict())


def _cmd_project(args):
    model, spec, sample, config = _setup(args)
    sol = solve_inner(model, spec, sample, _theta(args, model), config)
    _emit(args, sol.to_dict())


def _cmd_verify(args):
    model, spec, sample, config = _setup(args)
    theta = _theta(args, model)
    dual = solve_inner(model, spec, sample, theta, config)
    primal = primal_project(model, spec, sample, theta)
    _emit(args, {
        "dual": dual.to_dict(),
        "primal": primal.to_dict(),
        "value_gap": abs(dual.value - primal.value),
        "weight_gap": float(np.max(np.abs(dual.weights - primal.weights))),
        "feasibility": feasibility_probe(model, sample, theta, spec).status,
    })


def _cmd_test_model(args):
    model, spec, sample, config = _setup(args)
    _emit(args, model_test(model, spec, sample, args.alpha, config).to_dict())


def _cmd_test_point(args):
    model, spec, sample, config = _setup(args)
    _emit(args, simple_test(model, spec, sample, _theta(args, model), args.alpha, config).to_dict())


_COORDINATE_NAMES = {"normal2": ("mu", "v"), "qinlawless": ("theta",), "mean1": ("theta",)}


def _cmd_test_composite(args):
    model, spec, sample, config = _setup(args)
    name, value = args.fix
    names = _COORDINATE_NAMES.get(model.name, tuple(f"theta{j + 1}" for j in range(model.d)))
    if name not in names:
        raise _UsageError(f"--fix must name one of {', '.join(names)}")
    f, f_jac, box = fix_coordinate(model, names.index(name), value)
    init = np.delete(model.initial_theta(sample.observations), names.index(name))
    rep = composite_test(model, spec, sample, f, box, args.alpha, config,
                         beta_init=init, f_jac=f_jac, raw=args.raw_statistic)
    _emit(args, rep.to_dict())


def _cmd_cr(args):
    model, spec, sample, config = _setup(args)
    region = confidence_region(model, spec, sample, args.level, args.grid, config, jobs=args.jobs)
    _emit(args, region.to_dict())


def _cmd_cdf(args):
    model, spec, sample, config = _setup(args)
    res = estimate(model, spec, sample, config)
    rows = cdf_estimate(res, sample, args.at, monotone=args.monotone)
    lines = ["x,Fhat,Fn,W"]
    lines += [f"{r.x!r},{r.value!r},{r.empirical_value!r},{r.variance!r}" for r in rows]
    _emit_text(args, "\n".join(lines) + "\n")


def _cmd_simulate(args):
    if args.scenario:
        config = builtin_scenario(args.scenario)
    else:
        with open(args.config) as fh:
            config = ScenarioConfig.from_dict(json.load(fh))
    env_seed = os.environ.get("MEPHD_SEED")
    seed = args.seed
    if env_seed not in (None, ""):
        try:
            seed = int(env_seed)
        except ValueError:
            raise _UsageError("MEPHD_SEED must be an integer")
    divergences = tuple(d.strip() for d in args.divergences.split(",")) if args.divergences else None
    config = config.replace(
        reps=args.reps,
        seed=seed,
        sizes=tuple(args.sizes) if args.sizes else None,
        divergences=divergences,
    )
    report = run_scenario(config, jobs=args.jobs)
    if args.csv:
        _emit_text(args, report.to_csv())
    else:
        _emit(args, report.to_dict())


_COMMANDS = {
    "estimate": _cmd_estimate,
    "project": _cmd_project,
    "verify": _cmd_verify,
    "test-model": _cmd_test_model,
    "test-point": _cmd_test_point,
    "test-composite": _cmd_test_composite,
    "cr": _cmd_cr,
    "cdf": _cmd_cdf,
    "simulate": _cmd_simulate,
}


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) or a usage error (2)
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except _SOLVER_ERRORS as exc:
        body = {"error": type(exc).__name__, "message": str(exc)}
        reason = getattr(exc, "reason", None)
        if reason:
            body["reason"] = reason
        print(_dump(body))
        return 3
    except (_UsageError, *_INPUT_ERRORS) as exc:
        print(f"mephd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except MephdError as exc:
        print(f"mephd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
