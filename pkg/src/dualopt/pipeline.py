"""End-to-end driver: build instances, run the configured phases, report.

Modes: ``full`` runs the grid phase then the path phase; ``grid_only`` stops
after the grid phase; ``path_only`` starts from a random-insertion tour and
runs the path phase alone.
"""

from __future__ import annotations

import contextlib
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path


from .grid import GridConfig, default_n_iter, run_grid_phase
from .instances import (Instance, generate_random, load_tsplib, random_insertion,
                        read_tour, tour_length, write_tour)
from .openpath import ExhaustiveOpenPathSolver, HeuristicOpenPathSolver
from .parallel import run_ordered
from .pathopt import PathPhaseConfig, run_path_phase
from .protocol import CommandSubPathSolver, TcpSubPathSolver
from .report import InstanceResult, RunReport, compute_gap
from .subsolver import (Budget, ExhaustiveSolver, ExternalSolver, LocalSearchSolver)

MODES = ("full", "grid_only", "path_only")
LKH_ENV_VAR = "DUALOPT_LKH"


@dataclass
class RunConfig:
    """Everything one run needs; unset grid iterations fall back to the
    size-keyed default."""

    files: tuple[str, ...] = ()
    random_n: int | None = None
    count: int = 1
    seed: int = 0
    mode: str = "full"
    n_iter: int | None = None
    margin_scale: float = 1.0
    path: PathPhaseConfig = field(default_factory=PathPhaseConfig)
    subsolver: str = "builtin"  # builtin | exhaustive | external
    lkh_path: str | None = None
    subpath_solver: str = "heuristic"  # heuristic | exhaustive | command | tcp
    solver_cmd: tuple[str, ...] = ()
    tcp: tuple[str, int] | None = None
    budget: Budget | None = None
    workers: int | None = None
    instance_workers: int = 1  # >1 trades timing fidelity for sweep throughput
    out_dir: str | None = None
    grid_debug: bool = False
    baseline: dict[str, float] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.subsolver not in ("builtin", "exhaustive", "external"):
            raise ValueError(f"unknown subsolver {self.subsolver!r}")
        if self.subpath_solver not in ("heuristic", "exhaustive", "command", "tcp"):
            raise ValueError(f"unknown subpath solver {self.subpath_solver!r}")
        if self.subpath_solver == "command" and not self.solver_cmd:
            raise ValueError("subpath_solver='command' needs solver_cmd")
        if self.subpath_solver == "tcp" and self.tcp is None:
            raise ValueError("subpath_solver='tcp' needs a (host, port) address")

    def echo(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "margin_scale": self.margin_scale,
            "path_lengths": list(self.path.lengths),
            "path_iters": list(self.path.iters),
            "subsolver": self.subsolver,
            "subpath_solver": self.subpath_solver,
            "budget": None if self.budget is None else {
                "max_sweeps": self.budget.max_sweeps,
                "time_limit": self.budget.time_limit,
            },
        }


def _iter_instances(cfg: RunConfig):
    """Yield (name, loader, seed) lazily so load failures stay per-instance."""
    produced = False
    for f in cfg.files:
        produced = True
        yield Path(f).stem, (lambda f=f: load_tsplib(f)), cfg.seed
    if cfg.random_n is not None:
        for i in range(cfg.count):
            produced = True
            seed = cfg.seed + i
            n = cfg.random_n
            yield f"rnd{n}-{seed}", (lambda n=n, seed=seed: generate_random(n, seed)), seed
    if not produced:
        raise ValueError("no instances: give files or a random size")


def make_subsolver(cfg: RunConfig):
    if cfg.subsolver == "builtin":
        return LocalSearchSolver()
    if cfg.subsolver == "exhaustive":
        return ExhaustiveSolver()
    exe = cfg.lkh_path or os.environ.get(LKH_ENV_VAR)
    if not exe:
        raise ValueError(
            f"external subsolver needs --lkh-path or the {LKH_ENV_VAR} environment variable")
    return ExternalSolver(exe)


def make_subpath_solver(cfg: RunConfig):
    """Return the configured sub-path solver as a context manager."""
    if cfg.subpath_solver == "heuristic":
        return contextlib.nullcontext(HeuristicOpenPathSolver(workers=cfg.workers))
    if cfg.subpath_solver == "exhaustive":
        return contextlib.nullcontext(ExhaustiveOpenPathSolver())
    if cfg.subpath_solver == "command":
        return CommandSubPathSolver(list(cfg.solver_cmd))
    host, port = cfg.tcp
    return TcpSubPathSolver(host, port)


def solve_instance(inst: Instance, cfg: RunConfig, seed: int, subsolver, subpath_solver,
                   out_dir: Path | None = None) -> InstanceResult:
    """Run the configured mode on one instance; never raises, records errors."""
    row = InstanceResult(name=inst.name, n=inst.n, seed=seed)
    t0 = time.perf_counter()
    try:
        errors: list = []
        tour = None
        if cfg.mode in ("full", "grid_only"):
            gcfg = GridConfig(cfg.n_iter if cfg.n_iter is not None else default_n_iter(inst.n),
                              cfg.margin_scale)
            debug = None
            if cfg.grid_debug and out_dir is not None:
                debug = out_dir / f"{inst.name}.grid.json"
            t = time.perf_counter()
            tour = run_grid_phase(inst, gcfg, subsolver, budget=cfg.budget, seed=seed,
                                  workers=cfg.workers, debug_json=debug)
            row.phases["grid_time_s"] = time.perf_counter() - t
            row.phases["grid_len"] = tour_length(inst, tour)
        else:
            t = time.perf_counter()
            tour = random_insertion(inst, seed)
            row.phases["initial_time_s"] = time.perf_counter() - t
            row.phases["initial_len"] = tour_length(inst, tour)
        if cfg.mode in ("full", "path_only"):
            t = time.perf_counter()
            tour = run_path_phase(tour, cfg.path, subpath_solver, inst, errors=errors)
            row.phases["path_time_s"] = time.perf_counter() - t
        row.contract_errors = len(errors)
        obj = tour_length(inst, tour)
        if out_dir is not None:
            tour_file = out_dir / f"{inst.name}.tour"
            write_tour(tour_file, inst, tour)
            saved_order, saved_len = read_tour(tour_file)
            recomputed = tour_length(inst, saved_order)
            if not math.isclose(recomputed, obj, rel_tol=1e-12, abs_tol=1e-9):
                raise RuntimeError(
                    f"persisted tour re-check mismatch: {recomputed} vs {obj}")
            obj = recomputed
            row.tour_file = str(tour_file)
        row.obj = obj
        if cfg.baseline and inst.name in cfg.baseline:
            row.baseline_obj = cfg.baseline[inst.name]
            row.gap = compute_gap(obj, row.baseline_obj)
    except Exception as e:  # noqa: BLE001  (per-instance failures must not stop a sweep)
        row.error = f"{type(e).__name__}: {e}"
    finally:
        row.time_s = time.perf_counter() - t0
    return row


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Run every configured instance and collect a report.

    Instances run sequentially by default so per-instance timings are
    meaningful; ``instance_workers > 1`` runs them concurrently (each task
    gets its own sub-path solver, so out-of-process solvers stay single-user).
    """
    out_dir = None
    if cfg.out_dir is not None:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(config=cfg.echo())
    subsolver = make_subsolver(cfg)

    def run_one(spec) -> InstanceResult:
        name, loader, seed = spec
        try:
            inst = loader()
        except Exception as e:  # noqa: BLE001  (bad input must not stop the sweep)
            return InstanceResult(name=name, n=0, seed=seed,
                                  error=f"{type(e).__name__}: {e}")
        with make_subpath_solver(cfg) as subpath_solver:
            return solve_instance(inst, cfg, seed, subsolver, subpath_solver, out_dir)

    specs = list(_iter_instances(cfg))
    if cfg.instance_workers > 1:
        report.rows.extend(run_ordered(run_one, specs, workers=cfg.instance_workers))
    else:
        with make_subpath_solver(cfg) as subpath_solver:
            for name, loader, seed in specs:
                try:
                    inst = loader()
                except Exception as e:  # noqa: BLE001
                    report.rows.append(InstanceResult(
                        name=name, n=0, seed=seed, error=f"{type(e).__name__}: {e}"))
                    continue
                report.rows.append(
                    solve_instance(inst, cfg, seed, subsolver, subpath_solver, out_dir))
    return report
