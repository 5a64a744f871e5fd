"""Command-line front end: ``magnusctl <command> CONFIG [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
4 failed symmetry check. ``MAGNUSCTL_THREADS`` sets the worker count for
the overlap benchmark and batched optimization.
"""

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import fields as fieldmod
from .config import load_config, parse_quantity
from .errors import ConfigError, DimensionError, NumericalError, OptimizationError, UnsupportedStructureError
from .optimizer import OptimizerConfig, optimize
from .propagators import METHODS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERTION = 0, 2, 3, 4
THREADS_ENV = "MAGNUSCTL_THREADS"
DEFAULT_LADDER_NM = (5.0, 6.0, 7.0, 8.0, 9.0, 10.0)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_json(path, command, payload):
    doc = {
        "header": {
            "command": command,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
        }
    }
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _workers():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return value


def _outdir(cfg, args):
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _geometry_at(geom, R):
    """``geom`` rescaled so its shortest distance equals ``R``."""
    return geom.scaled(R / min(geom.R.values()))


def _system_summary(cfg):
    return {
        "N": cfg.geometry.N,
        "M": cfg.M,
        "R_m": {f"{i}-{j}": r for (i, j), r in sorted(cfg.geometry.R.items())},
        "theta_rad": {f"{i}-{j}": t for (i, j), t in sorted(cfg.geometry.theta.items())},
        "n": cfg.n,
        "T_internal": cfg.T,
        "dt_internal": cfg.dt,
        "time_unit_s": cfg.constants.time_unit,
        "field_unit_V_per_m": cfg.constants.field_unit,
    }


def cmd_propagate(args):
    cfg = load_config(args.config)
    if args.trajectory and args.method not in ("exact", "zeroth"):
        raise _Usage("--trajectory needs --method exact or zeroth; the Magnus propagators have no intermediate states")
    spec = cfg.build_spec()
    f = cfg.build_field()
    factors = cfg.initial_factors()
    res = ex.run_propagate(spec, f, factors, args.method, trajectory=args.trajectory)
    out = _outdir(cfg, args)
    fieldmod.write_csv(f, out / "field.csv")
    header = ["index"] + [f"m_{i + 1}" for i in range(spec.N)] + ["re", "im"]
    write_rows(out / f"state_{args.method}.csv", header, ex.state_rows(spec, res["state"]))
    if args.trajectory:
        write_rows(out / f"trajectory_{args.method}.csv", ex.trajectory_header(spec.N), res["trajectory"])
    names = ex.trajectory_header(spec.N)[2:]
    payload = {
        "method": args.method,
        "system": _system_summary(cfg),
        "expectations": dict(zip(names, res["orientations"])),
        "norm": float(np.linalg.norm(res["state"])),
    }
    write_json(out / f"propagate_{args.method}.json", "propagate", payload)
    for k, v in payload["expectations"].items():
        print(f"{k} {v:.12g}")
    return EXIT_OK


def cmd_optimize(args):
    cfg = load_config(args.config)
    if cfg.objective is None:
        raise ConfigError("optimize needs an [objective] section")
    if cfg.optimizer is None:
        raise ConfigError("optimize needs an [optimizer] section")
    spec = cfg.build_spec()
    if args.warm_start:
        path = Path(args.warm_start)
        if not path.is_file():
            raise ConfigError(f"warm-start file {path} does not exist")
        f = cfg.field_from_file(path)
    else:
        f = cfg.build_field()
    opt = cfg.optimizer
    overrides = {k: v for k, v in (("seed", args.seed), ("max_iters", args.max_iters), ("propagator", args.propagator)) if v is not None}
    if overrides or _workers() != opt.workers:
        opt = OptimizerConfig(**{**opt.__dict__, **overrides, "workers": _workers()})
    factors = cfg.initial_factors()
    result = optimize(spec, cfg.objective, factors, f, opt)
    evaluation = ex.evaluate_result(spec, cfg.objective, factors, result.best_field, opt.propagator)
    out = _outdir(cfg, args)
    fieldmod.write_csv(result.best_field, out / "best_field.csv")
    payload = {
        "system": _system_summary(cfg),
        "objective": {"kind": cfg.objective.kind, "weights": list(cfg.objective.weights)},
        "optimizer": {k: v for k, v in opt.__dict__.items() if k != "workers"},
        "seed": result.seed,
        "terminated_by": result.terminated_by,
        "iterations": result.iterations,
        "accepted_count": result.accepted_count,
        "J_trial": result.j_trial,
        "J_best": result.j_best,
        "j_trace": [[i, j] for i, j in result.j_trace],
        "field": {"dt": result.best_field.dt, "values": result.best_field.values.tolist()},
        **evaluation,
    }
    write_json(out / "optimize.json", "optimize", payload)
    print(f"J_magnus {evaluation['J_magnus']:.12g} J_exact {evaluation['J_exact']:.12g} difference {evaluation['difference']:.3g}")
    return EXIT_OK


def _separations(cfg, args):
    if args.separations:
        return tuple(parse_quantity(s, "length", key="--separations")[0] for s in args.separations)
    if cfg.benchmark.separations:
        return cfg.benchmark.separations
    return tuple(r * 1e-9 for r in DEFAULT_LADDER_NM)


def cmd_overlap_benchmark(args):
    cfg = load_config(args.config)
    seps = _separations(cfg, args)
    count = args.fields if args.fields is not None else cfg.benchmark.fields
    seed = args.seed if args.seed is not None else cfg.benchmark.seed
    methods = tuple(args.methods) if args.methods else cfg.benchmark.methods
    test_fields = ex.random_fields(seed, count, cfg.n, cfg.dt, cfg.field_amplitude)
    rows, summary = ex.overlap_benchmark(
        lambda R: cfg.build_spec(_geometry_at(cfg.geometry, R)),
        seps,
        test_fields,
        methods,
        coupling_scale=args.coupling_scale,
        workers=_workers(),
    )
    out = _outdir(cfg, args)
    write_rows(out / "overlap_fields.csv", ["R_m", "field", "method", "overlap"],
               [[r["R"], r["field"], r["method"], r["overlap"]] for r in rows])
    write_rows(out / "overlap_summary.csv", ["R_m", "method", "mean", "std", "count"],
               [[s["R"], s["method"], s["mean"], s["std"], s["count"]] for s in summary])
    for s in summary:
        print(f"R {s['R'] * 1e9:.4g} nm {s['method']} mean {s['mean']:.10f} std {s['std']:.3g}")
    return EXIT_OK


def cmd_symmetry_check(args):
    cfg = load_config(args.config)
    spec = cfg.build_spec()
    count = args.fields if args.fields is not None else cfg.benchmark.fields
    seed = args.seed if args.seed is not None else cfg.benchmark.seed
    test_fields = ex.random_fields(seed, count, cfg.n, cfg.dt, cfg.field_amplitude)
    report = ex.symmetry_check(spec, test_fields, tol=args.tol)
    out = _outdir(cfg, args)
    write_json(out / "symmetry.json", "symmetry-check", {"system": _system_summary(cfg), "fields": count, "seed": seed, **report})
    w = report["worst"]
    if not report["passed"]:
        print(
            f"symmetry violated: relation {w['relation']} residual {w['residual']:.3g} "
            f"at field {w['field']} step {w['k']} (t = {w['t']:.6g})",
            file=sys.stderr,
        )
        return EXIT_ASSERTION
    print(f"symmetry holds: max residual {w['residual']:.3g} <= {args.tol:g}")
    return EXIT_OK


def cmd_timing(args):
    cfg = load_config(args.config)
    spec = cfg.build_spec()
    f = cfg.build_field()
    rows = ex.timing(spec, f, args.methods, repeat=args.repeat)
    out = _outdir(cfg, args)
    header = ["method", "median_seconds", "expm_multiply_calls", "exact_over_method"]
    write_rows(out / "timing.csv", header, [[r[h] for h in header] for r in rows])
    for r in rows:
        print(f"{r['method']} {r['median_seconds']:.4g} s, {r['expm_multiply_calls']} full-space exp-actions")
    return EXIT_OK


class _Usage(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(prog="magnusctl", description="Magnus-expansion control of coupled rotors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.set_defaults(func=func)
        return sp

    sp = add("propagate", cmd_propagate, "propagate the configured field")
    sp.add_argument("--method", choices=METHODS, default="exact")
    sp.add_argument("--trajectory", action="store_true", help="write <cos>, <sin> at every step (exact, zeroth)")

    sp = add("optimize", cmd_optimize, "hill-climb the field and re-evaluate under exact dynamics")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-iters", type=int)
    sp.add_argument("--propagator", choices=METHODS)
    sp.add_argument("--warm-start", help="start from a field CSV or a previous optimize.json")

    sp = add("overlap-benchmark", cmd_overlap_benchmark, "overlap of approximate and exact states vs separation")
    sp.add_argument("--separations", nargs="+", help="distances with units, e.g. 5nm 6nm")
    sp.add_argument("--fields", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--methods", nargs="+", choices=("zeroth", "magnus1", "magnus2"))
    sp.add_argument("--coupling-scale", type=float, default=1.0)

    sp = add("symmetry-check", cmd_symmetry_check, "verify orientation symmetries under exact dynamics")
    sp.add_argument("--fields", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tol", type=float, default=1e-8)

    sp = add("timing", cmd_timing, "wall-clock and exp-action counts per propagator")
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=["exact", "magnus1"])
    sp.add_argument("--repeat", type=int, default=3)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))
    except OptimizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc.__cause__, NumericalError) else EXIT_CONFIG
    except (ConfigError, DimensionError, UnsupportedStructureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
