"""Command line interface: ``chic <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 audit failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import yaml

from .diagnostics import audit_run, read_csv
from .experiments import RunConfig, parse_kernel, regenerate_table1, run_experiment
from .fvsolver import SolverFailure
from .fvsolver.config import ConfigError
from .kernel import build_kernel
from .moments import MomentError, TuningError, compute_phi1, moment_report, tune_kernel

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4

REPORT_COLUMNS = ("kernel", "M1", "J1", "C1", "sup_phi1", "C0", "B")


def _out_path(args, name):
    if not args.out:
        return None
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _say(args, text):
    if not args.quiet:
        print(text)


def _report_fields(rep):
    return [rep.kernel_label, rep.M1, rep.J1, rep.C1, rep.sup_phi1, rep.C0, rep.B]


def cmd_moments(args):
    reports = [moment_report(build_kernel(parse_kernel(k), node_count=args.seed_table))
               for k in args.kernel]
    w = csv.writer(sys.stdout)
    if not args.quiet:
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in _report_fields(rep)])
    path = _out_path(args, "moments.csv")
    if path:
        with open(path, "w", newline="") as fh:
            fw = csv.writer(fh)
            fw.writerow(REPORT_COLUMNS)
            for rep in reports:
                fw.writerow([repr(float(v)) if isinstance(v, float) else v for v in _report_fields(rep)])
    return EXIT_OK


def cmd_design(args):
    template = parse_kernel(args.kernel)
    spec, rep = tune_kernel(template, args.param, (args.lo, args.hi))
    _say(args, yaml.safe_dump({"kernel": spec.to_dict(),
                               "report": dict(zip(REPORT_COLUMNS[1:], map(float, _report_fields(rep)[1:])))},
                              sort_keys=False).rstrip())
    path = _out_path(args, "design.yaml")
    if path:
        path.write_text(yaml.safe_dump({"kernel": spec.to_dict()}, sort_keys=False))
    return EXIT_OK


def cmd_profile(args):
    kernel = build_kernel(parse_kernel(args.kernel), node_count=args.seed_table)
    prof = compute_phi1(kernel, z_max=args.z_max, n_points=args.n_points)
    path = _out_path(args, "profile.csv")
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        if path or not args.quiet:
            w = csv.writer(fh)
            w.writerow(("z", "sigma", "phi1"))
            for row in zip(prof.z_grid, prof.sigma, prof.phi1):
                w.writerow([repr(float(v)) for v in row])
    finally:
        if path:
            fh.close()
    if path:
        _say(args, f"sup|phi1| = {prof.sup_norm:.6f}; wrote {path}")
    return EXIT_OK


def cmd_table1(args):
    text = regenerate_table1()
    _say(args, text)
    path = _out_path(args, "table1.txt")
    if path:
        path.write_text(text + "\n")
    return EXIT_OK if "FAIL" not in text else EXIT_AUDIT


def cmd_run(args):
    cfg = RunConfig.load(args.config)
    if args.seed_table is not None:
        cfg.table_nodes = args.seed_table
    res = run_experiment(cfg, out_dir=args.out)
    _say(args, yaml.safe_dump(res.summary, sort_keys=False).rstrip())
    _say(args, res.verdict.summary())
    return EXIT_OK if res.verdict.passed else EXIT_AUDIT


def cmd_audit(args):
    records = read_csv(args.csv)
    budget = args.budget
    if budget is None:
        summary = Path(args.csv).with_name("summary.yaml")
        if not summary.exists():
            raise ConfigError(f"no --budget given and no {summary} to read it from")
        budget = float(yaml.safe_load(summary.read_text())["audit_budget"])
    verdict = audit_run(records, budget, energy_rtol=args.energy_rtol)
    _say(args, verdict.summary())
    path = _out_path(args, "audit.yaml")
    if path:
        path.write_text(yaml.safe_dump(verdict.to_dict(), sort_keys=False))
    return EXIT_OK if verdict.passed else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for output files")
    common.add_argument("--seed-table", type=int, default=None, metavar="N",
                        help="node count of the Hermite tables for shaped kernels")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    p = argparse.ArgumentParser(prog="chic", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("moments", parents=[common], help="print moment reports as CSV")
    s.add_argument("kernel", nargs="+", help="preset name (nmn, exp1, pade, ...) or family:key=value,...")
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("design", parents=[common], help="tune one kernel parameter so C1 = 0")
    s.add_argument("kernel", help="template kernel")
    s.add_argument("--param", required=True, choices=("beta2", "p", "q"))
    s.add_argument("--bracket", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("profile", parents=[common], help="dump the first inner correction as CSV")
    s.add_argument("kernel")
    s.add_argument("--z-max", type=float, default=20.0)
    s.add_argument("--n-points", type=int, default=2001)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("table1", parents=[common], help="recompute the kernel summary table")
    s.set_defaults(func=cmd_table1)

    s = sub.add_parser("run", parents=[common], help="run a simulation from a YAML config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("audit", parents=[common], help="audit a diagnostics CSV")
    s.add_argument("csv")
    s.add_argument("--budget", type=float, default=None,
                   help="allowed Q-mass deviation (default: audit_budget from summary.yaml)")
    s.add_argument("--energy-rtol", type=float, default=1e-10)
    s.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "bracket", None):
        args.lo, args.hi = args.bracket
    if args.seed_table is None and args.command != "run":
        args.seed_table = 256
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, TuningError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, MomentError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
