"""Command line interface.

Subcommands: ``solve`` one instance, ``bench`` a sweep, ``gen`` random
instances to TSPLIB files, ``ablate`` the three pipeline modes side by side,
and ``serve`` the built-in open-path solver over the JSON line protocol.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

from .instances import generate_random, save_tsplib
from .openpath import OpenPathProblem, solve_open_path
from .pathopt import PathPhaseConfig
from .pipeline import MODES, RunConfig, run_pipeline
from .protocol import serve_stdio, serve_tcp
from .report import RunReport, emit_report, render_markdown
from .subsolver import Budget


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _add_run_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--random", type=int, metavar="N", help="generate a random instance of N nodes")
    sp.add_argument("--count", type=int, default=1, help="number of random instances (seeds seed..seed+count-1)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=MODES, default="full")
    sp.add_argument("--n-iter", type=int, help="grid iterations (default: keyed on instance size)")
    sp.add_argument("--margin-scale", type=float, default=1.0)
    sp.add_argument("--path-lengths", type=_int_list, default=(50, 20, 10), metavar="L,L,...")
    sp.add_argument("--path-iters", type=_int_list, default=(25, 10, 5), metavar="I,I,...")
    sp.add_argument("--subsolver", choices=("builtin", "exhaustive", "external"), default="builtin")
    sp.add_argument("--lkh-path", help="external solver executable (or set DUALOPT_LKH)")
    sp.add_argument("--subpath-solver", choices=("heuristic", "exhaustive", "command", "tcp"),
                    default="heuristic")
    sp.add_argument("--solver-cmd", help="command line of an external sub-path solver (stdio protocol)")
    sp.add_argument("--tcp", metavar="HOST:PORT", help="address of a TCP sub-path solver")
    sp.add_argument("--sweeps", type=int, help="deterministic per-cell sweep budget")
    sp.add_argument("--cell-time", type=float, help="per-cell wall-clock budget in seconds")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--parallel-instances", type=int, default=1,
                    help="run instances concurrently (trades timing fidelity for throughput)")
    sp.add_argument("--out-dir", help="directory for tour files and debug dumps")
    sp.add_argument("--grid-debug", action="store_true", help="write per-iteration grid JSON dumps")


def _config_from(args, files: tuple[str, ...]) -> RunConfig:
    budget = None
    if args.sweeps is not None or args.cell_time is not None:
        budget = Budget(max_sweeps=args.sweeps, time_limit=args.cell_time)
    tcp = None
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        tcp = (host or "127.0.0.1", int(port))
    return RunConfig(
        files=files,
        random_n=args.random,
        count=args.count,
        seed=args.seed,
        mode=args.mode,
        n_iter=args.n_iter,
        margin_scale=args.margin_scale,
        path=PathPhaseConfig(args.path_lengths, args.path_iters),
        subsolver=args.subsolver,
        lkh_path=args.lkh_path,
        subpath_solver=args.subpath_solver,
        solver_cmd=tuple(shlex.split(args.solver_cmd)) if args.solver_cmd else (),
        tcp=tcp,
        budget=budget,
        workers=args.workers,
        instance_workers=args.parallel_instances,
        out_dir=args.out_dir,
        grid_debug=args.grid_debug,
        baseline=getattr(args, "_baseline", None),
    )


def _emit(report: RunReport, args) -> None:
    if getattr(args, "out", None):
        emit_report(report, args.format, args.out)
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(render_markdown(report))


def cmd_solve(args) -> int:
    files = (args.instance,) if args.instance else ()
    cfg = _config_from(args, files)
    report = run_pipeline(cfg)
    row = report.rows[0]
    if row.error is not None:
        print(f"{row.name}: FAILED: {row.error}", file=sys.stderr)
        return 1
    print(f"{row.name}: n={row.n} obj={row.obj:.6f} time={row.time_s:.2f}s")
    for key, val in sorted(row.phases.items()):
        print(f"  {key}: {val:.6f}" if isinstance(val, float) else f"  {key}: {val}")
    if row.contract_errors:
        print(f"  contract_errors: {row.contract_errors}")
    if row.tour_file:
        print(f"  tour: {row.tour_file}")
    if args.report:
        emit_report(report, "json", args.report)
    return 0


def cmd_bench(args) -> int:
    if args.baseline:
        import json
        args._baseline = {k: float(v) for k, v in json.loads(Path(args.baseline).read_text()).items()}
    cfg = _config_from(args, tuple(args.instances))
    report = run_pipeline(cfg)
    _emit(report, args)
    failed = sum(1 for r in report.rows if r.error is not None)
    return 1 if failed else 0


def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_random(args.n, args.seed + i)
        path = out / f"{inst.name}.tsp"
        save_tsplib(inst, path)
        print(path)
    return 0


def cmd_ablate(args) -> int:
    rows = []
    for mode in MODES:
        args.mode = mode
        cfg = _config_from(args, tuple(args.instances))
        report = run_pipeline(cfg)
        agg = report.aggregate()
        rows.append((mode, agg))
        print(f"{mode}: mean_obj={agg.get('mean_obj', float('nan')):.4f} "
              f"solved={agg['solved']}/{agg['instances']}")
    if args.out:
        import json
        Path(args.out).write_text(json.dumps(
            {mode: agg for mode, agg in rows}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_serve(args) -> int:
    budget = None
    if args.sweeps is not None or args.cell_time is not None:
        budget = Budget(max_sweeps=args.sweeps, time_limit=args.cell_time)

    def solve_fn(coords, start, end):
        return solve_open_path(OpenPathProblem(coords, start, end), budget, args.seed)

    if args.transport == "stdio":
        serve_stdio(solve_fn)
    else:
        serve_tcp(solve_fn, args.host, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualopt",
                                description="Two-phase divide-and-optimize TSP solver")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve a single instance")
    sp.add_argument("instance", nargs="?", help="TSPLIB file (or use --random)")
    _add_run_flags(sp)
    sp.add_argument("--report", help="also write a JSON report here")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("bench", help="solve a set of instances and report")
    sp.add_argument("instances", nargs="*", help="TSPLIB files")
    _add_run_flags(sp)
    sp.add_argument("--baseline", help="JSON file mapping instance name to baseline objective")
    sp.add_argument("--format", choices=("json", "csv", "markdown"), default="markdown")
    sp.add_argument("--out", help="report output path (default: print markdown)")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("gen", help="write random instances as TSPLIB files")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("ablate", help="run full, grid_only, and path_only side by side")
    sp.add_argument("instances", nargs="*", help="TSPLIB files")
    _add_run_flags(sp)
    sp.add_argument("--out", help="write aggregate JSON here")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("serve", help="serve the built-in open-path solver (JSON line protocol)")
    sp.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=7391)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sweeps", type=int)
    sp.add_argument("--cell-time", type=float)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
