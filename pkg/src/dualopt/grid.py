"""Grid divide-and-conquer phase.

Iteratively tiles the bounding box into a shrinking number of square cells,
solves each cell in parallel, then breaks every cell route into frozen
partial routes plus free nodes. The final iteration solves one reduced
problem (free nodes plus compressed partial routes) into a full tour.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instances import Instance
from .parallel import run_ordered
from .subsolver import Budget, FixedEdgeViolation, SubProblem, SubSolver

__all__ = [
    "GridCell",
    "GridConfig",
    "GridIteration",
    "GridSolveError",
    "PartialRoute",
    "PartitionError",
    "break_edges",
    "compress_partial_routes",
    "default_n_iter",
    "expand_route",
    "grid_count",
    "partition",
    "run_grid_phase",
    "solve_grids_parallel",
]


class PartitionError(RuntimeError):
    """A partial route's nodes fall into more than one grid cell."""


class GridSolveError(RuntimeError):
    """A sub-solver failed on one cell; the message names the cell index."""


class ConservationError(RuntimeError):
    """Partial routes and free nodes stopped covering the instance exactly."""


@dataclass(frozen=True)
class PartialRoute:
    """An open chain of node indices whose internal edges are frozen."""

    chain: tuple[int, ...]
    internal_length: float

    def __post_init__(self):
        if len(self.chain) < 2:
            raise ValueError("a partial route needs at least two nodes")
        if len(set(self.chain)) != len(self.chain):
            raise ValueError("partial route nodes must be distinct")

    @staticmethod
    def from_chain(chain, coords: np.ndarray) -> "PartialRoute":
        pts = coords[np.asarray(chain, dtype=np.int64)]
        seg = np.hypot(*(pts[1:] - pts[:-1]).T)
        return PartialRoute(tuple(int(v) for v in chain), float(seg.sum()))


@dataclass
class GridCell:
    """One tile of the partition: its bounds, free nodes, and partial routes."""

    bounds: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    free_nodes: list[int] = field(default_factory=list)
    partial_routes: list[PartialRoute] = field(default_factory=list)

    def node_count(self) -> int:
        return len(self.free_nodes) + sum(len(r.chain) for r in self.partial_routes)


@dataclass(frozen=True)
class GridConfig:
    """Grid phase knobs: iteration count and margin width multiplier."""

    n_iter: int
    margin_scale: float = 1.0

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.margin_scale <= 0:
            raise ValueError(f"margin_scale must be positive, got {self.margin_scale}")


def default_n_iter(n: int) -> int:
    """Iteration-count default keyed on instance size."""
    if n < 5_000:
        return 2
    if n < 20_000:
        return 3
    if n < 100_000:
        return 4
    return 5


def grid_count(n_iter: int, iteration: int) -> int:
    """Number of cells at a given iteration: 4^(n_iter - iteration)."""
    if not 1 <= iteration <= n_iter:
        raise ValueError(f"iteration must be in 1..{n_iter}, got {iteration}")
    return 4 ** (n_iter - iteration)


def partition(routes: list[PartialRoute], nodes, K: int, inst: Instance) -> list[GridCell]:
    """Tile the instance bbox into sqrt(K) x sqrt(K) cells and assign work.

    Free nodes go to the cell containing them; a node exactly on a shared
    edge belongs to the cell with the larger x (then larger y) index. Every
    partial route must lie entirely within one cell.
    """
    side = math.isqrt(K)
    if side * side != K or (side & (side - 1)) != 0:
        raise ValueError(f"K must be a power of 4 (including 1), got {K}")
    x_min, x_max, y_min, y_max = inst.bbox
    w = (x_max - x_min) / side
    h = (y_max - y_min) / side

    def cell_index(x: float, y: float) -> int:
        ix = 0 if w == 0 else min(int((x - x_min) // w), side - 1)
        iy = 0 if h == 0 else min(int((y - y_min) // h), side - 1)
        return iy * side + ix

    cells = [
        GridCell(bounds=(x_min + (j % side) * w, x_min + (j % side + 1) * w,
                         y_min + (j // side) * h, y_min + (j // side + 1) * h))
        for j in range(K)
    ]
    coords = inst.coords
    for v in sorted(int(u) for u in nodes):
        cells[cell_index(coords[v, 0], coords[v, 1])].free_nodes.append(v)
    for r in routes:
        homes = {cell_index(coords[u, 0], coords[u, 1]) for u in r.chain}
        if len(homes) != 1:
            raise PartitionError(
                f"partial route spans grid cells {sorted(homes)}; margin too small for this tiling")
        cells[homes.pop()].partial_routes.append(r)
    return cells


def break_edges(route: np.ndarray, cell: GridCell, n_iter: int,
                margin_scale: float = 1.0, *,
                coords: np.ndarray) -> tuple[list[PartialRoute], set[int]]:
    """Split a cell route into frozen chains and free nodes.

    The internal rectangle is the cell shrunk inward on all four sides by
    spacing = cell x-extent / 2^(n_iter + 2), times ``margin_scale``. An edge
    survives iff both endpoints are strictly inside; surviving edges form
    maximal chains. A route that survives intact has its longest edge broken
    so the result stays an open chain. ``coords`` are the instance-wide node
    coordinates.
    """
    route = np.asarray(route, dtype=np.int64)
    m = len(route)
    if m == 0:
        return [], set()
    if m == 1:
        return [], {int(route[0])}
    x0, x1, y0, y1 = cell.bounds
    spacing = (x1 - x0) / 2 ** (n_iter + 2) * margin_scale
    rx0, rx1 = x0 + spacing, x1 - spacing
    ry0, ry1 = y0 + spacing, y1 - spacing
    if rx0 >= rx1 or ry0 >= ry1:
        return [], set(int(v) for v in route)
    pts = coords[route]
    xs, ys = pts[:, 0], pts[:, 1]
    inside = (xs > rx0) & (xs < rx1) & (ys > ry0) & (ys < ry1)

    if m == 2:
        if inside.all():
            return [PartialRoute.from_chain(route, coords)], set()
        return [], set(int(v) for v in route)

    kept = inside & np.roll(inside, -1)
    if kept.all():
        seg = pts - np.roll(pts, -1, axis=0)
        longest = int(np.argmax(np.hypot(seg[:, 0], seg[:, 1])))
        kept[longest] = False
    if not kept.any():
        return [], set(int(v) for v in route)

    start = int(np.flatnonzero(~kept)[0])
    chains: list[PartialRoute] = []
    cur: list[int] = []
    for off in range(1, m + 1):
        e = (start + off) % m
        if kept[e]:
            u, v = int(route[e]), int(route[(e + 1) % m])
            if not cur:
                cur = [u, v]
            else:
                cur.append(v)
        elif cur:
            chains.append(PartialRoute.from_chain(cur, coords))
            cur = []
    in_chain = {v for c in chains for v in c.chain}
    free = {int(v) for v in route} - in_chain
    return chains, free


def compress_partial_routes(routes: list[PartialRoute]) -> tuple[
        list[int], list[tuple[int, int, float]], dict[tuple[int, int], tuple[int, ...]]]:
    """Replace each chain by its endpoints joined by a mandatory fixed edge.

    Returns (endpoint node list, fixed edge list, expansion map). The
    expansion map keys are sorted endpoint pairs; values restore the interior.
    """
    endpoints: list[int] = []
    fixed: list[tuple[int, int, float]] = []
    expansion: dict[tuple[int, int], tuple[int, ...]] = {}
    for r in routes:
        a, b = r.chain[0], r.chain[-1]
        if a == b:
            raise ValueError(f"partial route closes a cycle at node {a}")
        key = (a, b) if a < b else (b, a)
        if key in expansion:
            raise ValueError(f"two partial routes share endpoints {key}")
        endpoints.extend((a, b))
        fixed.append((a, b, r.internal_length))
        expansion[key] = r.chain
    return endpoints, fixed, expansion


def expand_route(route: np.ndarray, expansion: dict[tuple[int, int], tuple[int, ...]]) -> np.ndarray:
    """Splice compressed chains back into a reduced route.

    Raises :class:`FixedEdgeViolation` if any chain's endpoints are not
    adjacent in the route.
    """
    route = np.asarray(route, dtype=np.int64)
    if not expansion:
        return route
    remaining = dict(expansion)
    out: list[int] = []
    m = len(route)
    for i in range(m):
        u, v = int(route[i]), int(route[(i + 1) % m])
        out.append(u)
        key = (u, v) if u < v else (v, u)
        chain = remaining.pop(key, None)
        if chain is not None:
            interior = chain[1:-1]
            out.extend(interior if chain[0] == u else interior[::-1])
    if remaining:
        raise FixedEdgeViolation(
            f"route leaves {len(remaining)} compressed chain(s) unexpanded: {sorted(remaining)}")
    return np.asarray(out, dtype=np.int64)


def solve_grids_parallel(cells: list[GridCell], solver: SubSolver, inst: Instance, *,
                         budget: Budget | None = None, seed: int = 0,
                         workers: int | None = None,
                         details: list | None = None) -> list[np.ndarray]:
    """Solve every nonempty cell as an independent task; output order matches input.

    Each returned route covers the cell's free nodes plus all partial-route
    nodes, with frozen edges consecutive. Empty cells yield empty routes.
    ``details`` (when given) collects (cell index, SubProblem or None, reduced
    route) for inspection.
    """

    def solve_cell(item: tuple[int, GridCell]):
        idx, cell = item
        if cell.node_count() == 0:
            return idx, None, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        endpoints, fixed, expansion = compress_partial_routes(cell.partial_routes)
        sub_ids = np.asarray(sorted(cell.free_nodes) + endpoints, dtype=np.int64)
        problem = None
        if sub_ids.size <= 3:
            reduced = sub_ids
        else:
            problem = SubProblem(node_ids=sub_ids, coords=inst.coords[sub_ids],
                                 fixed_edges=tuple(fixed))
            cell_budget = budget if budget is not None else Budget.scaled(sub_ids.size)
            cell_seed = int(np.random.SeedSequence((seed, idx)).generate_state(1)[0])
            try:
                reduced = solver.solve(problem, cell_budget, cell_seed)
            except Exception as e:
                raise GridSolveError(f"sub-solver failed on cell {idx}: {e}") from e
        try:
            full = expand_route(reduced, expansion)
        except FixedEdgeViolation as e:
            raise GridSolveError(f"cell {idx}: {e}") from e
        return idx, problem, np.asarray(reduced, dtype=np.int64), full

    results = run_ordered(solve_cell, list(enumerate(cells)), workers=workers)
    if details is not None:
        details.extend((idx, prob, reduced) for idx, prob, reduced, _ in results)
    return [full for _, _, _, full in results]


@dataclass
class GridIteration:
    """Snapshot of one grid iteration, for tracing and invariant checks."""

    iteration: int
    grid_count: int
    cells: list[GridCell]
    cell_details: list  # (cell index, SubProblem | None, reduced route)
    cell_routes: list[np.ndarray]
    chains: list[PartialRoute]
    free_nodes: set[int]

    def summary(self) -> dict:
        return {
            "iteration": self.iteration,
            "grid_count": self.grid_count,
            "cells": [
                {
                    "bounds": list(c.bounds),
                    "free_nodes": len(c.free_nodes),
                    "partial_routes": len(c.partial_routes),
                }
                for c in self.cells
            ],
            "chains_after": len(self.chains),
            "free_after": len(self.free_nodes),
        }


def _check_conservation(n: int, routes: list[PartialRoute], nodes: set[int]) -> None:
    covered = list(nodes)
    for r in routes:
        covered.extend(r.chain)
    if len(covered) != n or set(covered) != set(range(n)):
        raise ConservationError(
            f"partial routes and free nodes cover {len(set(covered))} of {n} nodes "
            f"({len(covered)} with multiplicity)")


def run_grid_phase(inst: Instance, cfg: GridConfig, solver: SubSolver, *,
                   budget: Budget | None = None, seed: int = 0,
                   workers: int | None = None,
                   trace: list[GridIteration] | None = None,
                   debug_json: str | Path | None = None) -> np.ndarray:
    """Run the full grid phase and return a tour over all nodes.

    ``trace`` (when given) collects a :class:`GridIteration` per iteration;
    ``debug_json`` writes the same information as a JSON file.
    """
    if inst.n < 3:
        raise ValueError(f"need n >= 3, got {inst.n}")
    nodes: set[int] = set(range(inst.n))
    routes: list[PartialRoute] = []
    tour: np.ndarray | None = None
    dumps = []
    for it in range(1, cfg.n_iter + 1):
        K = grid_count(cfg.n_iter, it)
        cells = partition(routes, nodes, K, inst)
        details: list = []
        it_seed = int(np.random.SeedSequence((seed, it)).generate_state(1)[0])
        cell_routes = solve_grids_parallel(
            cells, solver, inst, budget=budget, seed=it_seed, workers=workers,
            details=details)
        if it != cfg.n_iter:
            routes = []
            nodes = set()
            for cell, rt in zip(cells, cell_routes):
                if rt.size == 0:
                    continue
                chains, free = break_edges(rt, cell, cfg.n_iter, cfg.margin_scale,
                                           coords=inst.coords)
                routes.extend(chains)
                nodes.update(free)
            _check_conservation(inst.n, routes, nodes)
        else:
            tour = cell_routes[0]
        record = GridIteration(it, K, cells, details, cell_routes,
                               list(routes) if it != cfg.n_iter else [],
                               set(nodes) if it != cfg.n_iter else set())
        if trace is not None:
            trace.append(record)
        if debug_json is not None:
            dumps.append(record.summary())
    if debug_json is not None:
        Path(debug_json).write_text(json.dumps(dumps, indent=2) + "\n")
    assert tour is not None
    return tour
