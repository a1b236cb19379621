"""Command-line front end.

    trajsens run <config> [--output-dir DIR] [--hessian {gn,full,gd}] [--threads N]
    trajsens check <config> [--threads N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 optimizer stopped without reaching the gradient tolerance.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .config import HESSIAN_ALIASES, load_config
from .errors import ConfigError, TrajsensError
from .fdcheck import run_checks
from .optimizer import optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

logger = logging.getLogger("trajsens")


def _fmt(v):
    return f"{float(v):.17g}"


def write_trajectory_csv(path, states, u):
    T, n = states.shape
    m = u.shape[1]
    header = ["step"] + [f"x{k}" for k in range(n)] + [f"u{k}" for k in range(m)]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(T):
            row = [str(i + 1)] + [_fmt(v) for v in states[i]] + [_fmt(v) for v in u[i]]
            fh.write(",".join(row) + "\n")


def write_report_csv(path, report):
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,objective,grad_inf_norm,alpha,lambda,millis\n")
        for r in report.records:
            fh.write(",".join([str(r.iteration), _fmt(r.objective), _fmt(r.grad_inf_norm),
                               _fmt(r.alpha), _fmt(r.lambda_used), f"{r.millis:.3f}"]) + "\n")


def write_summary(path, cfg, report):
    last = report.records[-1] if report.records else None
    lines = [
        f"system: {cfg.system_name}",
        f"hessian_mode: {cfg.optimizer.hessian_mode}",
        f"termination: {report.reason}",
        f"iterations: {report.iterations}",
        f"rollouts: {report.rollouts}",
        f"max_rollout_residual: {report.max_rollout_residual:.3e}",
    ]
    if last is not None:
        lines += [f"final_objective: {_fmt(last.objective)}", f"final_grad_inf_norm: {_fmt(last.grad_inf_norm)}"]
    lines.append(f"total_millis: {sum(r.millis for r in report.records):.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def _load(args):
    cfg = load_config(args.config)
    opt = cfg.optimizer
    overrides = {}
    if getattr(args, "hessian", None):
        overrides["hessian_mode"] = HESSIAN_ALIASES[args.hessian]
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        overrides["threads"] = args.threads
    if args.backend is not None:
        overrides["backend"] = args.backend
    if overrides:
        cfg.optimizer = dataclasses.replace(opt, **overrides)
    if getattr(args, "output_dir", None):
        cfg.output_dir = Path(args.output_dir)
    return cfg


def cmd_run(args):
    cfg = _load(args)
    system, obj, u0, ic = cfg.build()
    u_opt, report = optimize(system, obj, u0, ic, cfg.optimizer)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", report.trajectory.states, u_opt)
    write_report_csv(out / "report.csv", report)
    write_summary(out / "summary.txt", cfg, report)

    last = report.records[-1]
    print(f"{report.reason}: {report.iterations} iterations, objective {last.objective:.10g}, "
          f"|grad|_inf {last.grad_inf_norm:.3e} -> {out}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_check(args):
    cfg = _load(args)
    system, obj, u0, ic = cfg.build()
    results = run_checks(system, obj, u0, ic, threads=cfg.optimizer.threads)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "derivative check FAILED")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="workers for sensitivity columns")
    common.add_argument("--backend", choices=("cython", "python"), default=None,
                        help="kernel backend (default: compiled if available)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajsens", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="optimize the experiment in a config file")
    run.add_argument("config")
    run.add_argument("--output-dir", default=None)
    run.add_argument("--hessian", choices=sorted(HESSIAN_ALIASES), default=None)
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", parents=[common], help="validate derivatives at the initial iterate")
    check.add_argument("config")
    check.add_argument("--hessian", choices=sorted(HESSIAN_ALIASES), default=None)
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend == "cython" and not kernels.compiled_available():
        print("error: compiled kernels are not built", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajsensError as exc:
        where = f" (iteration {exc.iteration})" if getattr(exc, "iteration", None) is not None else ""
        print(f"numerical failure{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
