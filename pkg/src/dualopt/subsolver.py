"""Closed-tour solvers for sub-problems with mandatory fixed edges.

The built-in solver (nearest-neighbor construction, then 2-opt and Or-opt
sweeps that never cut a fixed edge) is the default. An adapter to an external
LKH executable exists for parity runs and a small exhaustive solver serves as
the optimality reference on tiny inputs.
"""

from __future__ import annotations

import itertools
import math
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

MOVE_EPS = 1e-10
DENSE_DISTANCE_LIMIT = 1500  # above this, distances are computed on demand


class FixedEdgeStructureError(ValueError):
    """Fixed edges do not form disjoint simple paths."""


class FixedEdgeViolation(RuntimeError):
    """A solver's output route does not contain a mandatory edge."""


class ExternalSolverMissing(RuntimeError):
    """The external solver executable could not be found or started."""


class ExternalSolverFailed(RuntimeError):
    """The external solver exited with a nonzero status."""


class ExternalTourParseError(RuntimeError):
    """The external solver's tour output could not be parsed."""


@dataclass(frozen=True)
class Budget:
    """Stopping rule for the local search: sweep count, wall clock, or both.

    ``None`` fields are unlimited; the search always stops at a local optimum.
    Iteration (sweep) budgets are deterministic and preferred in tests.
    """

    max_sweeps: int | None = None
    time_limit: float | None = None

    def __post_init__(self):
        if self.max_sweeps is not None and self.max_sweeps <= 0:
            raise ValueError(f"max_sweeps must be positive, got {self.max_sweeps}")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")

    @staticmethod
    def scaled(n_nodes: int) -> "Budget":
        """Default wall-clock budget: 50 ms per 100 nodes, 50 ms floor."""
        return Budget(time_limit=max(0.05, 0.05 * n_nodes / 100.0))


@dataclass(frozen=True, eq=False)
class SubProblem:
    """A closed-tour sub-problem over global node ids.

    ``fixed_edges`` are (u, v, cost) triples in global ids; they must form
    disjoint simple paths and each must appear consecutively in any solution.
    The cost is the traversal cost of the edge (for compressed partial routes
    this is the internal chain length, not the Euclidean gap).
    """

    node_ids: np.ndarray
    coords: np.ndarray
    fixed_edges: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64)
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (ids.size, 2):
            raise ValueError(f"coords shape {coords.shape} does not match {ids.size} node ids")
        if len(set(ids.tolist())) != ids.size:
            raise ValueError("node_ids must be distinct")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "fixed_edges", tuple(
            (int(u), int(v), float(c)) for u, v, c in self.fixed_edges))

    @property
    def size(self) -> int:
        return int(self.node_ids.size)


class SubSolver(Protocol):
    """Anything that can solve a :class:`SubProblem` into a closed route."""

    def solve(self, problem: SubProblem, budget: Budget | None, seed: int) -> np.ndarray:
        """Return a cyclic route over ``problem.node_ids`` honoring fixed edges."""
        ...


def _local_fixed_edges(p: SubProblem) -> list[tuple[int, int, float]]:
    """Map fixed edges to local indices, validating membership."""
    index = {int(g): i for i, g in enumerate(p.node_ids)}
    out = []
    for u, v, c in p.fixed_edges:
        if u not in index or v not in index:
            raise FixedEdgeStructureError(f"fixed edge ({u}, {v}) references a node outside the sub-problem")
        if u == v:
            raise FixedEdgeStructureError(f"fixed edge ({u}, {v}) is a self-loop")
        out.append((index[u], index[v], c))
    return out


def _fixed_paths(k: int, fixed_local: list[tuple[int, int, float]]) -> list[list[int]]:
    """Group fixed edges into simple paths of local node indices.

    Raises :class:`FixedEdgeStructureError` if any node has three or more
    fixed incidences or the edges close a cycle.
    """
    adj: dict[int, list[int]] = {}
    for u, v, _ in fixed_local:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
        if len(adj[u]) > 2 or len(adj[v]) > 2:
            node = u if len(adj[u]) > 2 else v
            raise FixedEdgeStructureError(f"node {node} has more than two fixed edges")
    paths = []
    seen: set[int] = set()
    endpoints = sorted(u for u, nbrs in adj.items() if len(nbrs) == 1)
    for start in endpoints:
        if start in seen:
            continue
        path = [start]
        seen.add(start)
        cur, prev = start, -1
        while True:
            nxt = [w for w in adj[cur] if w != prev]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            path.append(cur)
            seen.add(cur)
        paths.append(path)
    leftover = set(adj) - seen
    if leftover:
        raise FixedEdgeStructureError(f"fixed edges form a cycle through nodes {sorted(leftover)}")
    return paths


def _atoms(k: int, paths: list[list[int]]) -> list[list[int]]:
    """Fixed paths plus free singletons, in deterministic order."""
    in_path = {v for path in paths for v in path}
    return [list(p) for p in paths] + [[i] for i in range(k) if i not in in_path]


class _TourSearch:
    """Mutable local-search state over local node indices."""

    def __init__(self, coords: np.ndarray, fixed_local: list[tuple[int, int, float]],
                 candidate_k: int):
        self.k = len(coords)
        self.coords = coords
        self.fixed_pairs = {(min(u, v), max(u, v)) for u, v, _ in fixed_local}
        # Reporting-only offset: fixed edges cost their frozen length, not the gap.
        self.fixed_extra = sum(
            c - math.hypot(coords[u, 0] - coords[v, 0], coords[u, 1] - coords[v, 1])
            for u, v, c in fixed_local)
        if self.k <= DENSE_DISTANCE_LIMIT:
            diff = coords[:, None, :] - coords[None, :, :]
            self._dense = np.hypot(diff[..., 0], diff[..., 1]).tolist()
        else:
            self._dense = None
        self._xs = coords[:, 0].tolist()
        self._ys = coords[:, 1].tolist()
        q = min(candidate_k + 1, self.k)
        _, idx = cKDTree(coords).query(coords, k=q)
        idx = np.atleast_2d(idx)
        self.neigh = [[int(c) for c in row if c != v] for v, row in enumerate(idx)]
        self.tour: list[int] = []
        self.pos: list[int] = [0] * self.k

    def dist(self, a: int, b: int) -> float:
        if self._dense is not None:
            return self._dense[a][b]
        return math.hypot(self._xs[a] - self._xs[b], self._ys[a] - self._ys[b])

    def set_tour(self, tour: list[int]) -> None:
        self.tour = tour
        self._rebuild_pos()

    def _rebuild_pos(self) -> None:
        for i, v in enumerate(self.tour):
            self.pos[v] = i

    def length(self) -> float:
        total = self.fixed_extra
        tour = self.tour
        for i in range(self.k):
            total += self.dist(tour[i], tour[(i + 1) % self.k])
        return total

    def is_fixed(self, a: int, b: int) -> bool:
        return (a, b) in self.fixed_pairs if a < b else (b, a) in self.fixed_pairs

    def _apply_two_opt(self, i: int, j: int) -> None:
        # Removes edges at positions i and j, reversing the span between them.
        lo, hi = (i + 1, j) if i < j else (j + 1, i)
        self.tour[lo:hi + 1] = self.tour[lo:hi + 1][::-1]
        for t in range(lo, hi + 1):
            self.pos[self.tour[t]] = t

    def two_opt_pass(self, deadline: float | None) -> bool:
        improved = False
        k, tour, pos = self.k, self.tour, self.pos
        dist, is_fixed, neigh = self.dist, self.is_fixed, self.neigh
        for i in range(k):
            if deadline is not None and i % 128 == 0 and time.perf_counter() > deadline:
                return improved
            a = tour[i]
            b = tour[(i + 1) % k]
            if is_fixed(a, b):
                continue
            d_ab = dist(a, b)
            moved = False
            for c in neigh[a]:
                if c == a or c == b:
                    continue
                d_ac = dist(a, c)
                if d_ac >= d_ab:
                    break  # neighbors are distance-sorted
                j = pos[c]
                d2 = tour[(j + 1) % k]
                if d2 == a or is_fixed(c, d2):
                    continue
                delta = d_ac + dist(b, d2) - d_ab - dist(c, d2)
                if delta < -MOVE_EPS:
                    self._apply_two_opt(i, j)
                    improved = moved = True
                    break
            if moved:
                continue
            for c in neigh[b]:
                if c == a or c == b:
                    continue
                d_bc = dist(b, c)
                if d_bc >= d_ab:
                    break
                j2 = (pos[c] - 1) % k
                c2 = tour[j2]
                if c2 == b or c2 == a or is_fixed(c2, c):
                    continue
                delta = dist(a, c2) + d_bc - d_ab - dist(c2, c)
                if delta < -MOVE_EPS:
                    self._apply_two_opt(i, j2)
                    improved = True
                    break
        return improved

    def _splice(self, i: int, seg_len: int, c: int, reverse: bool) -> None:
        seg = self.tour[i:i + seg_len]
        del self.tour[i:i + seg_len]
        if reverse:
            seg.reverse()
        jc = self.pos[c]
        if jc > i:
            jc -= seg_len
        self.tour[jc + 1:jc + 1] = seg
        self._rebuild_pos()

    def or_opt_pass(self, deadline: float | None) -> bool:
        improved = False
        k = self.k
        dist, is_fixed, neigh = self.dist, self.is_fixed, self.neigh
        for seg_len in (1, 2, 3):
            if k <= seg_len + 2:
                break
            i = 0
            while i <= k - seg_len:
                if deadline is not None and i % 128 == 0 and time.perf_counter() > deadline:
                    return improved
                tour, pos = self.tour, self.pos
                if i + seg_len > k:
                    break
                seg = tour[i:i + seg_len]
                s0, s1 = seg[0], seg[-1]
                prev = tour[i - 1]
                nxt = tour[(i + seg_len) % k]
                if is_fixed(prev, s0) or is_fixed(s1, nxt):
                    i += 1
                    continue
                gain = dist(prev, s0) + dist(s1, nxt) - dist(prev, nxt)
                if gain <= MOVE_EPS:
                    i += 1
                    continue
                seg_set = set(seg)
                moved = False
                for anchor in (s0, s1):
                    for c in neigh[anchor]:
                        if c in seg_set or c == prev:
                            continue
                        d2 = tour[(pos[c] + 1) % k]
                        if d2 in seg_set or is_fixed(c, d2):
                            continue
                        base = dist(c, d2)
                        fwd = dist(c, s0) + dist(s1, d2)
                        bwd = dist(c, s1) + dist(s0, d2)
                        cost, rev = (fwd, False) if fwd <= bwd else (bwd, True)
                        if cost - base - gain < -MOVE_EPS:
                            self._splice(i, seg_len, c, rev)
                            improved = moved = True
                            break
                    if moved:
                        break
                i += 1
        return improved


def _nn_construct(search: _TourSearch, atoms: list[list[int]], rng: np.random.Generator) -> list[int]:
    """Greedy nearest-neighbor over atoms; fixed paths enter at their nearer end."""
    n_atoms = len(atoms)
    start = int(rng.integers(n_atoms))
    visited = [False] * n_atoms
    visited[start] = True
    route = list(atoms[start])
    for _ in range(n_atoms - 1):
        tail = route[-1]
        best = (math.inf, -1, False)
        for j in range(n_atoms):
            if visited[j]:
                continue
            atom = atoms[j]
            d0 = search.dist(tail, atom[0])
            if d0 < best[0]:
                best = (d0, j, False)
            if len(atom) > 1:
                d1 = search.dist(tail, atom[-1])
                if d1 < best[0]:
                    best = (d1, j, True)
        _, j, rev = best
        visited[j] = True
        route.extend(reversed(atoms[j]) if rev else atoms[j])
    return route


def solve_local_search(p: SubProblem, budget: Budget | None = None, seed: int = 0, *,
                       candidate_k: int = 10,
                       sweep_lengths: list[float] | None = None) -> np.ndarray:
    """Solve a sub-problem with nearest-neighbor construction plus 2-opt/Or-opt.

    First-improvement sweeps run until no move improves or the budget is
    exhausted; fixed edges are never cut. Deterministic for a given seed.
    ``sweep_lengths`` collects the tour length after each sweep when given.
    """
    k = p.size
    if k < 3:
        raise ValueError(f"need at least 3 nodes, got {k}")
    if budget is None:
        budget = Budget.scaled(k)
    if not isinstance(budget, Budget):
        raise ValueError(f"budget must be a Budget, got {type(budget).__name__}")
    fixed_local = _local_fixed_edges(p)
    paths = _fixed_paths(k, fixed_local)
    search = _TourSearch(p.coords, fixed_local, candidate_k)
    rng = np.random.Generator(np.random.PCG64(seed))
    search.set_tour(_nn_construct(search, _atoms(k, paths), rng))

    t0 = time.perf_counter()
    deadline = t0 + budget.time_limit if budget.time_limit is not None else None
    sweeps = 0
    while True:
        improved = search.two_opt_pass(deadline)
        improved |= search.or_opt_pass(deadline)
        sweeps += 1
        if sweep_lengths is not None:
            sweep_lengths.append(search.length())
        if not improved:
            break
        if budget.max_sweeps is not None and sweeps >= budget.max_sweeps:
            break
        if deadline is not None and time.perf_counter() > deadline:
            break
    return p.node_ids[np.asarray(search.tour, dtype=np.int64)]


def solve_exhaustive(p: SubProblem) -> np.ndarray:
    """Globally optimal route by enumeration, fixed paths contracted to atoms.

    Refuses sub-problems with more than 10 nodes.
    """
    k = p.size
    if k > 10:
        raise ValueError(f"exhaustive solver refuses more than 10 nodes, got {k}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    fixed_local = _local_fixed_edges(p)
    paths = _fixed_paths(k, fixed_local)
    atoms = _atoms(k, paths)
    n_atoms = len(atoms)
    if n_atoms == 1:
        return p.node_ids[np.asarray(atoms[0], dtype=np.int64)]
    coords = p.coords
    diff = coords[:, None, :] - coords[None, :, :]
    dmat = np.hypot(diff[..., 0], diff[..., 1]).tolist()

    path_slots = [j for j in range(1, n_atoms) if len(atoms[j]) > 1]
    dedup = len(atoms[0]) == 1 and n_atoms >= 3
    best_cost = math.inf
    best_route: list[int] | None = None
    for perm in itertools.permutations(range(1, n_atoms)):
        if dedup and perm[0] > perm[-1]:
            continue
        for bits in itertools.product((False, True), repeat=len(path_slots)):
            flip = dict(zip(path_slots, bits))
            cost = 0.0
            exit_node = atoms[0][-1]
            first_entry = atoms[0][0]
            route = list(atoms[0])
            for j in perm:
                atom = atoms[j]
                if flip.get(j, False):
                    atom = atom[::-1]
                cost += dmat[exit_node][atom[0]]
                if cost >= best_cost:
                    break
                route.extend(atom)
                exit_node = atom[-1]
            else:
                cost += dmat[exit_node][first_entry]
                if cost < best_cost:
                    best_cost = cost
                    best_route = route
    assert best_route is not None
    return p.node_ids[np.asarray(best_route, dtype=np.int64)]


class LocalSearchSolver:
    """Default built-in :class:`SubSolver` backed by :func:`solve_local_search`."""

    def __init__(self, candidate_k: int = 10):
        self.candidate_k = candidate_k

    def solve(self, problem: SubProblem, budget: Budget | None, seed: int) -> np.ndarray:
        return solve_local_search(problem, budget, seed, candidate_k=self.candidate_k)


class ExhaustiveSolver:
    """Enumeration-backed :class:`SubSolver` for tiny sub-problems."""

    def solve(self, problem: SubProblem, budget: Budget | None, seed: int) -> np.ndarray:
        return solve_exhaustive(problem)


def verify_fixed_edges(route: np.ndarray, fixed_edges) -> None:
    """Raise :class:`FixedEdgeViolation` unless every fixed edge is consecutive."""
    k = len(route)
    adjacent = set()
    for i in range(k):
        a, b = int(route[i]), int(route[(i + 1) % k])
        adjacent.add((a, b) if a < b else (b, a))
    for u, v, _ in fixed_edges:
        key = (u, v) if u < v else (v, u)
        if key not in adjacent:
            raise FixedEdgeViolation(f"fixed edge ({u}, {v}) missing from route")


def format_problem_file(p: SubProblem, name: str = "subproblem", scale: float | None = None) -> str:
    """TSPLIB text for a sub-problem, fixed edges in 1-based local indices.

    Coordinates are scaled (default: longest bbox side to 1e6) because EUC_2D
    consumers round each edge to the nearest integer.
    """
    coords = p.coords
    if scale is None:
        extent = float(max(np.ptp(coords[:, 0]), np.ptp(coords[:, 1])))
        scale = 1e6 / extent if extent > 0 else 1.0
    index = {int(g): i for i, g in enumerate(p.node_ids)}
    lines = [
        f"NAME : {name}",
        "TYPE : TSP",
        f"DIMENSION : {p.size}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    for i, (x, y) in enumerate(coords, start=1):
        lines.append(f"{i} {x * scale:.6f} {y * scale:.6f}")
    if p.fixed_edges:
        lines.append("FIXED_EDGES_SECTION")
        for u, v, _ in p.fixed_edges:
            lines.append(f"{index[u] + 1} {index[v] + 1}")
        lines.append("-1")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_tour_file(text: str, n: int) -> list[int]:
    """Extract the 1-based TOUR_SECTION of external solver output as 0-based indices."""
    seq: list[int] = []
    in_section = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.upper().startswith("TOUR_SECTION"):
            in_section = True
            continue
        if not in_section:
            continue
        for token in line.split():
            if token == "-1" or token.upper() == "EOF":
                in_section = False
                break
            try:
                seq.append(int(token) - 1)
            except ValueError:
                raise ExternalTourParseError(f"unexpected token {token!r} in tour section") from None
    if len(seq) != n or sorted(seq) != list(range(n)):
        raise ExternalTourParseError(
            f"tour section is not a permutation of {n} nodes (got {len(seq)} entries)")
    return seq


def solve_via_external(p: SubProblem, exe_path: str | Path,
                       budget: Budget | None = None, seed: int = 0) -> np.ndarray:
    """Solve via an external LKH-compatible executable.

    Writes a problem file with a FIXED_EDGES_SECTION plus a parameter file,
    runs the binary in a private temp directory, parses the output tour, maps
    it back to global ids, and verifies every fixed edge is present.
    """
    exe = Path(exe_path)
    if not exe.exists():
        raise ExternalSolverMissing(f"external solver not found at {exe}")
    with tempfile.TemporaryDirectory(prefix="dualopt-lkh-") as td:
        tdir = Path(td)
        problem = tdir / "problem.tsp"
        params = tdir / "params.par"
        out_tour = tdir / "out.tour"
        problem.write_text(format_problem_file(p))
        par_lines = [
            f"PROBLEM_FILE = {problem}",
            f"OUTPUT_TOUR_FILE = {out_tour}",
            f"SEED = {seed}",
        ]
        if budget is not None and budget.time_limit is not None:
            par_lines.append(f"TIME_LIMIT = {budget.time_limit}")
        params.write_text("\n".join(par_lines) + "\n")
        try:
            res = subprocess.run([str(exe), str(params)], capture_output=True, text=True)
        except (FileNotFoundError, PermissionError) as e:
            raise ExternalSolverMissing(f"could not run {exe}: {e}") from e
        if res.returncode != 0:
            raise ExternalSolverFailed(
                f"{exe.name} exited with {res.returncode}: {res.stderr.strip()[-500:]}")
        if not out_tour.exists():
            raise ExternalTourParseError(f"{exe.name} produced no tour file")
        local = parse_tour_file(out_tour.read_text(), p.size)
    route = p.node_ids[np.asarray(local, dtype=np.int64)]
    verify_fixed_edges(route, p.fixed_edges)
    return route


class ExternalSolver:
    """:class:`SubSolver` adapter around an external executable."""

    def __init__(self, exe_path: str | Path):
        self.exe_path = Path(exe_path)

    def solve(self, problem: SubProblem, budget: Budget | None, seed: int) -> np.ndarray:
        return solve_via_external(problem, self.exe_path, budget, seed)
