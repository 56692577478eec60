"""Command line entry point: ``nlch <command> CONFIG [--output-dir DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 a study or
check ran to completion but one of its verdicts failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import (
    STUDY_COMMANDS,
    build_grid,
    build_initial,
    build_model,
    build_potential,
    build_solver,
    build_study_spec,
    build_velocity,
    load_config,
    resolved_dict,
)
from .dynamics import RunOutput, run
from .errors import ConfigError, GridMismatch, KernelTooWide, NLCHError, StepDiverged, UnderResolved
from .kernel import bbm_check, bbm_trend_ok, build_kernel, build_symbol, dump_symbol
from .study import run_study, write_report

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERDICT = 0, 2, 3, 4

log = logging.getLogger("nlch")


def _prepare(args):
    cfg = load_config(args.config)
    out = Path(args.output_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(resolved_dict(cfg, args.seed), indent=2, sort_keys=True) + "\n")
    return cfg, out


def cmd_simulate(args) -> int:
    cfg, out = _prepare(args)
    u0 = build_initial(cfg, args.seed)
    beta = build_velocity(cfg, args.seed)
    solver = build_solver(cfg)
    model = build_model(cfg)
    sinks = RunOutput(out, cfg.solver.snapshot_every, snapshots="snapshot" in cfg.output.formats)
    summary = run(u0, model, build_potential(cfg), beta, solver, sinks=sinks)
    print(f"final lyapunov: {summary.final_lyapunov!r}")
    print(f"mass drift: {summary.mass_drift:.3e}")
    print(f"dt*S: {summary.dt_times_S:.3e}")
    print(f"wall time: {summary.wall_time:.2f} s")
    print(f"diagnostics: {sinks.csv_path}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg, out = _prepare(args)
    spec = build_study_spec(cfg, args.kind, args.seed)
    report = run_study(spec)
    path = write_report(report, out)
    sys.stdout.write(report.summary())
    print(f"report: {path}")
    if report.incomplete:
        return EXIT_SOLVER
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_bbm(args) -> int:
    cfg, out = _prepare(args)
    field = build_initial(cfg, args.seed)
    k = cfg.kernel
    rows = bbm_check(field, cfg.bbm.eps, k.family, k.method, k.normalization)
    path = out / "bbm_check.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "energy", "target", "gap", "resolved"])
        for r in rows:
            w.writerow([repr(r.eps), repr(r.energy), repr(r.target), repr(r.gap), str(r.resolved)])
    for r in rows:
        flag = "" if r.resolved else "  (under-resolved)"
        print(f"eps={r.eps:<8g} E_eps={r.energy:.10e} target={r.target:.10e} gap={r.gap:.3e}{flag}")
    ok = bbm_trend_ok(rows, cfg.bbm.threshold)
    print(f"verdict gap_trend: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_dump_symbol(args) -> int:
    cfg, out = _prepare(args)
    grid = build_grid(cfg)
    k = cfg.kernel
    symbol = build_symbol(build_kernel(k.family, k.eps, grid.dim, grid.L, k.normalization), grid, k.method)
    path = out / f"symbol_{k.family}_eps{k.eps:g}_{k.method}.csv"
    dump_symbol(symbol, path)
    print(f"symbol: {path}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlch", description="Nonlocal convective Cahn-Hilliard simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "run one simulation")
    for name, kind in STUDY_COMMANDS.items():
        add(name, cmd_study, f"{kind} study").set_defaults(kind=kind)
    p = sub.add_parser("study", help="run a study by kind name")
    p.add_argument("kind")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_study)
    add("bbm-check", cmd_bbm, "compare E_eps with the Dirichlet energy")
    add("dump-symbol", cmd_dump_symbol, "write the nonlocal Fourier symbol as CSV")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KernelTooWide, GridMismatch, UnderResolved) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepDiverged as exc:
        print(f"solver error at step {exc.step_index}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NLCHError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
