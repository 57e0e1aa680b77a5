"""Command-line interface.

Exit codes: 0 success, 2 invalid input (usage, config, assumptions),
3 a solve stopped at ``max_iter`` without meeting its tolerances.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .diagnostics import diagnose, refinement_study, stability_experiment
from .io import (
    ConfigError,
    load_config,
    output_directory,
    read_fields,
    write_fields,
    write_report,
    write_table,
)
from .model import AssumptionError, exponents
from .solver import solve

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3

log = logging.getLogger("mfgplan")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfgplan", description="Mean field games planning problem solver.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="worker threads for FFT transforms (default 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver checkpoints")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve and write fields, history and summary")
    s.add_argument("config")
    s.add_argument("--out", help="output folder (default: config, then $MFGPLAN_OUTPUT_DIR)")

    s = sub.add_parser("diagnose", help="recompute certificates on stored fields")
    s.add_argument("config")
    s.add_argument("fields_dir")
    s.add_argument("--out", help="folder for summary.json (default: the fields folder)")

    s = sub.add_parser("refine", help="solve and diagnose on a sequence of grids")
    s.add_argument("config")
    s.add_argument("--N", type=int, nargs="+", help="cells per axis, ascending")
    s.add_argument("--Nt", type=int, nargs="+", help="time steps, ascending")
    s.add_argument("--out")

    s = sub.add_parser("stability", help="perturb the endpoints toward the uniform density")
    s.add_argument("config")
    s.add_argument("--eps", type=float, nargs="+", help="mixing weights")
    s.add_argument("--out")

    s = sub.add_parser("exponents", help="print r', q', ell and nu")
    s.add_argument("config")
    return p


def _cmd_solve(args, cfg) -> int:
    problem, grid = cfg.problem_spec(), cfg.grid_spec()
    bundle = solve(problem, grid, cfg.solver_config(args.threads))
    out = output_directory(args.out, cfg)
    d = cfg.diagnostics
    report = diagnose(problem, grid, bundle, d.eps_mask, d.tau_interior, d.holder_samples)
    if "csv" in cfg.output.formats:
        write_fields(bundle, grid, out)
    if "json" in cfg.output.formats:
        write_report(report, out, cfg, bundle)
    print(f"status={bundle.status} iterations={bundle.iterations} B={bundle.B:.12g} "
          f"A={bundle.A:.12g} gap={bundle.gap:.3e} feas={bundle.feas:.3e} -> {out}")
    return EXIT_OK if bundle.converged else EXIT_NOT_CONVERGED


def _cmd_diagnose(args, cfg) -> int:
    problem, grid = cfg.problem_spec(), cfg.grid_spec()
    primal, dual = read_fields(grid, args.fields_dir)
    d = cfg.diagnostics
    report = diagnose(problem, grid, (primal, dual), d.eps_mask, d.tau_interior, d.holder_samples)
    out = Path(args.out) if args.out else Path(args.fields_dir)
    write_report(report, out, cfg, name="diagnostics.json")
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def _cmd_refine(args, cfg) -> int:
    problem = cfg.problem_spec()
    N = args.N or cfg.diagnostics.refine_N
    Nt = args.Nt or (args.N if args.N else cfg.diagnostics.refine_Nt)
    try:
        table = refinement_study(problem, cfg.solver_config(args.threads), N, Nt,
                                 cfg.diagnostics.eps_mask, cfg.diagnostics.tau_interior)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    out = output_directory(args.out, cfg)
    write_table(table.rows, out / "refinement.csv")
    spreads = {k: table.spread(k) for k in ("seminorm_space_m", "seminorm_space_u",
                                            "seminorm_time_m", "seminorm_time_u", "holder")}
    write_report(None, out, cfg, extra={"rows": table.rows, "spread": spreads,
                                         "B_cauchy": table.B_cauchy()}, name="refinement.json")
    for row in table.rows:
        print(f"N={row['N']} Nt={row['Nt']} status={row['status']} B={row['B']:.10g} gap={row['gap']:.2e} "
              f"s_m={row['seminorm_space_m']:.4g} s_u={row['seminorm_space_u']:.4g} "
              f"t_m={row['seminorm_time_m']:.4g} t_u={row['seminorm_time_u']:.4g}")
    print("spread: " + " ".join(f"{k}={v:.3f}" for k, v in spreads.items()))
    ok = all(r["status"] == "converged" for r in table.rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _cmd_stability(args, cfg) -> int:
    problem, grid = cfg.problem_spec(), cfg.grid_spec()
    eps = args.eps or cfg.diagnostics.eps_list
    try:
        table = stability_experiment(problem, grid, cfg.solver_config(args.threads), eps)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    out = output_directory(args.out, cfg)
    write_table(table.rows(), out / "stability.csv")
    mono = table.monotone()
    write_report(None, out, cfg, extra={"rows": table.rows(), "monotone": mono, "atol": table.atol,
                                         "B_rel_change": table.B_rel_change().tolist()},
                 name="stability.json")
    for row in table.rows():
        print(f"eps={row['eps']:<6g} B={row['B']:.10g} ||m||_q={row['lq_norm']:.6g} status={row['status']}")
    print(f"pairings monotone: {all(mono.values())}; |dB|/B at last eps: {table.B_rel_change()[-1]:.3e}")
    ok = all(s == "converged" for s in table.status)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _cmd_exponents(args, cfg) -> int:
    e = exponents(cfg.problem_spec())
    print(f"r'={e.r_conj:.12g}\nq'={e.q_conj:.12g}\nell={e.ell:.12g}\nnu={e.nu:.12g}")
    return EXIT_OK


COMMANDS = {
    "solve": _cmd_solve,
    "diagnose": _cmd_diagnose,
    "refine": _cmd_refine,
    "stability": _cmd_stability,
    "exponents": _cmd_exponents,
}


def cli(argv: list[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except AssumptionError as err:
        print(f"assumption violated: {err}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args, cfg)
    except (AssumptionError, ConfigError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
