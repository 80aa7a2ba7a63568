"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure (the error kind is printed).
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from pathlib import Path

import numpy as np

from ..errors import HGMError
from ..hgm import LinePath, SolverConfig, pole_scan, solve_ivp
from ..models import Trajectory, noise_generator, simulate
from ..oracle import default_grid, initial_table
from ..pfaffian import load_pfaffian, max_integrability_residual, sample_box_points
from .config import ExperimentConfig, load_config, resolve_path
from .experiment import (
    ExperimentReport,
    initial_density,
    load_model,
    run_experiment,
    run_filter,
    write_results,
)
from .plot import plot_report

INTEGRABILITY_TOLERANCE = 1e-10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# closed forms used by hgm-check: Q as a function of the point
CLOSED_FORMS = {
    "cos_example": lambda p: np.array([math.cos(p[0] * p[1]), -p[0] * math.sin(p[0] * p[1])]),
    "gauss1d": lambda p: np.array([math.sqrt(2.0 * math.pi) * math.exp(-p[0] ** 2)]),
}


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(s) for s in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    cfg = _config(args).with_overrides(model=args.model, steps=args.steps)
    model = load_model(cfg.model)
    traj = simulate(model, cfg.steps, initial_density(cfg, model), cfg.seed)
    _emit(traj.dumps(), args.out)
    return 0


def cmd_run_filter(args) -> int:
    cfg = _config(args).with_overrides(model=args.model, steps=args.steps, filters=(args.filter,))
    model = load_model(cfg.model)
    if args.trajectory:
        with open(args.trajectory, newline="") as fh:
            traj = Trajectory.from_csv(fh, cfg.seed)
    else:
        traj = simulate(model, cfg.steps, initial_density(cfg, model), cfg.seed)
    run = run_filter(cfg, args.filter, traj, cfg.seed)
    buf = io.StringIO()
    write_results(buf, [(None, run)])
    _emit(buf.getvalue(), args.out)
    for k, kind in run.errors:
        print(f"step {k}: {kind}", file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args).with_overrides(realizations=args.realizations, out_dir=args.out)
    report = run_experiment(cfg, workers=args.workers)
    paths = report.write(cfg.out_dir)
    for f in cfg.filters:
        finite = report.mean_nll[f][np.isfinite(report.mean_nll[f])]
        avg = float(finite.mean()) if finite.size else float("nan")
        print(
            f"{f}: mean NLL {avg:.4f}, median step {report.time_summary[f][2] / 1e3:.1f} us, "
            f"failed realizations {report.failed_realizations[f]}/{report.realizations}"
        )
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_init_table(args) -> int:
    cfg = _config(args).with_overrides(model=args.model)
    model = load_model(cfg.model)
    system = load_pfaffian(resolve_path(args.pfaffian))
    points = default_grid(model) if args.points is None else np.loadtxt(args.points, delimiter=",", ndmin=2)
    table = initial_table(model, system, points, cfg.quadrature())
    _emit(table.dumps(), args.out)
    return 0


def cmd_verify_pfaffian(args) -> int:
    system = load_pfaffian(resolve_path(args.file))
    seed = 0 if args.seed is None else args.seed
    points = sample_box_points(system, args.points, noise_generator(seed, 0, 0))
    res = max_integrability_residual(system, points)
    print(f"max integrability residual over {args.points} points: {res:.3e}")
    if res <= INTEGRABILITY_TOLERANCE:
        return 0
    print(f"IntegrabilityViolation: residual exceeds {INTEGRABILITY_TOLERANCE:g}", file=sys.stderr)
    return 2


def cmd_hgm_check(args) -> int:
    system = load_pfaffian(resolve_path(args.file))
    exact = CLOSED_FORMS.get(system.name)
    if args.q0 is not None:
        q0 = args.q0
    elif exact is not None:
        q0 = exact(args.start)
    else:
        raise UsageError(f"no closed form registered for {system.name!r}; pass --q0")
    cfg = SolverConfig(method=args.method, steps=args.steps)
    path = LinePath(args.start, args.end)
    hit = pole_scan(system, path, cfg)
    if hit is not None:
        raise hit.error()
    q = solve_ivp(system, path, q0, cfg)
    print("Q = " + " ".join(repr(float(v)) for v in q))
    if exact is not None:
        ref = exact(args.end)
        rel = float(np.max(np.abs(q - ref)) / max(np.max(np.abs(ref)), 1e-300))
        print("reference = " + " ".join(repr(float(v)) for v in ref))
        print(f"relative error = {rel:.3e}")
    return 0


def cmd_plot(args) -> int:
    report = ExperimentReport.read(args.report)
    out = Path(args.out or args.report)
    out.mkdir(parents=True, exist_ok=True)
    for name, svg in plot_report(report).items():
        (out / name).write_text(svg)
        print(f"wrote {out / name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="base seed override")
    common.add_argument("--out", help="output file or directory")

    p = _Parser(prog="hgmfilter", description="Holonomic-gradient Gaussian filtering toolkit")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="simulate a trajectory to CSV")
    s.add_argument("--model")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run-filter", parents=[common], help="run one filter over a trajectory")
    s.add_argument("--filter", required=True)
    s.add_argument("--model")
    s.add_argument("--steps", type=int)
    s.add_argument("--trajectory", help="trajectory CSV; simulated from the config if omitted")
    s.set_defaults(func=cmd_run_filter)

    s = sub.add_parser("experiment", parents=[common], help="multi-realization NLL and timing study")
    s.add_argument("--realizations", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("init-table", parents=[common], help="initial-point table from the quadrature oracle")
    s.add_argument("--pfaffian", required=True)
    s.add_argument("--model")
    s.add_argument("--points", help="CSV of z points (default: sign grid)")
    s.set_defaults(func=cmd_init_table)

    s = sub.add_parser("verify-pfaffian", parents=[common], help="check the integrability condition")
    s.add_argument("file")
    s.add_argument("--points", type=int, default=100)
    s.set_defaults(func=cmd_verify_pfaffian)

    s = sub.add_parser("hgm-check", parents=[common], help="transport Q and compare with a closed form")
    s.add_argument("file")
    s.add_argument("--from", dest="start", type=_floats, required=True)
    s.add_argument("--to", dest="end", type=_floats, required=True)
    s.add_argument("--q0", type=_floats)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--method", default="abm4", choices=("abm4", "rk4"))
    s.set_defaults(func=cmd_hgm_check)

    s = sub.add_parser("plot", parents=[common], help="render SVG plots from an experiment directory")
    s.add_argument("report", help="directory holding nll.csv, timing.csv, failures.csv")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except HGMError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
