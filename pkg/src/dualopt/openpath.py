"""Open-path solvers: fixed start and end, every node visited once.

The heuristic (cheapest insertion followed by path 2-opt) is the default
engine behind the path phase; the exhaustive variant is the optimality
reference for small windows.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .parallel import run_ordered
from .subsolver import Budget

MOVE_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class OpenPathProblem:
    """A fixed-endpoint path problem over local indices 0..k-1."""

    coords: np.ndarray
    start: int
    end: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (k, 2), got {coords.shape}")
        k = len(coords)
        if not (0 <= self.start < k and 0 <= self.end < k):
            raise ValueError(f"endpoints {self.start}, {self.end} outside 0..{k - 1}")
        if k >= 2 and self.start == self.end:
            raise ValueError("start and end must differ")
        object.__setattr__(self, "coords", coords)

    @property
    def k(self) -> int:
        return int(len(self.coords))


def path_cost(coords: np.ndarray, order) -> float:
    pts = np.asarray(coords)[np.asarray(order, dtype=np.int64)]
    d = pts[1:] - pts[:-1]
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def _two_opt_round(t: np.ndarray, dmat: np.ndarray, lower: np.ndarray) -> int:
    """Apply all non-overlapping improving interior reversals, best first.

    Reversing t[i..j] removes edges (i-1, i), (j, j+1) and adds (i-1, j),
    (i, j+1). Returns the number of reversals applied.
    """
    k = len(t)
    interior = np.arange(1, k - 1)
    new1 = dmat[np.ix_(t[interior - 1], t[interior])]
    new2 = dmat[np.ix_(t[interior], t[interior + 1])]
    old1 = dmat[t[interior - 1], t[interior]][:, None]
    old2 = dmat[t[interior], t[interior + 1]][None, :]
    delta = new1 + new2 - old1 - old2
    delta[lower] = np.inf
    improving = np.argwhere(delta < -MOVE_EPS)
    if improving.size == 0:
        return 0
    ranked = improving[np.argsort(delta[improving[:, 0], improving[:, 1]])]
    taken = np.zeros(k, dtype=bool)
    applied = 0
    for i_idx, j_idx in ranked:
        i, j = int(interior[i_idx]), int(interior[j_idx])
        if taken[i - 1:j + 2].any():
            continue
        t[i:j + 1] = t[i:j + 1][::-1]
        taken[i - 1:j + 2] = True
        applied += 1
    return applied


def _best_or_opt(t: np.ndarray, dmat: np.ndarray) -> tuple[float, tuple]:
    """Best relocation of an interior run of 1..3 nodes, either orientation."""
    k = len(t)
    best = (math.inf, ())
    for seg_len in (1, 2, 3):
        if k - 2 < seg_len + 1:
            break  # nothing would be left to insert between
        starts = np.arange(1, k - seg_len)  # segment stays interior
        ends = starts + seg_len - 1
        gain = (dmat[t[starts - 1], t[starts]] + dmat[t[ends], t[ends + 1]]
                - dmat[t[starts - 1], t[ends + 1]])
        edges = np.arange(0, k - 1)
        edge_cost = dmat[t[edges], t[edges + 1]]
        ins_f = (dmat[np.ix_(t[starts], t[edges])].T
                 + dmat[np.ix_(t[ends], t[edges + 1])].T - edge_cost[:, None])
        ins_b = (dmat[np.ix_(t[ends], t[edges])].T
                 + dmat[np.ix_(t[starts], t[edges + 1])].T - edge_cost[:, None])
        # rows: insertion edge c, cols: segment start i
        invalid = (edges[:, None] >= starts[None, :] - 1) & (edges[:, None] <= ends[None, :])
        delta_f = ins_f - gain[None, :]
        delta_b = ins_b - gain[None, :]
        delta_f[invalid] = np.inf
        delta_b[invalid] = np.inf
        for delta, rev in ((delta_f, False), (delta_b, True)):
            flat = int(np.argmin(delta))
            c_idx, s_idx = divmod(flat, delta.shape[1])
            val = float(delta[c_idx, s_idx])
            if val < best[0]:
                best = (val, ("move", int(starts[s_idx]), seg_len, int(edges[c_idx]), rev))
    return best


def _apply_move(t: np.ndarray, move: tuple) -> np.ndarray:
    if move[0] == "rev":
        _, i, j = move
        t[i:j + 1] = t[i:j + 1][::-1]
        return t
    _, i, seg_len, c, rev = move
    seg = t[i:i + seg_len][::-1] if rev else t[i:i + seg_len]
    rest = np.concatenate([t[:i], t[i + seg_len:]])
    c2 = c if c < i else c - seg_len
    return np.concatenate([rest[:c2 + 1], seg, rest[c2 + 1:]])


def solve_open_path(p: OpenPathProblem, budget: Budget | None = None, seed: int = 0) -> np.ndarray:
    """Order the nodes from start to end, all nodes visited once.

    Cheapest insertion builds the path, then interior 2-opt reversals and
    Or-opt relocations (runs of 1..3 nodes, either orientation) are applied
    best-improvement-first until no move helps or the budget runs out. Fully
    deterministic; ``seed`` is kept for interface compatibility. Problems
    with fewer than 3 nodes pass through unchanged.
    """
    k = p.k
    if k < 3:
        return np.arange(k, dtype=np.int64)
    dmat = _distance_matrix(p.coords)
    order = [p.start, p.end]
    remaining = [i for i in range(k) if i != p.start and i != p.end]
    while remaining:
        t = np.asarray(order)
        r = np.asarray(remaining)
        da = dmat[np.ix_(r, t[:-1])]
        db = dmat[np.ix_(r, t[1:])]
        delta = da + db - dmat[t[:-1], t[1:]][None, :]
        flat = int(np.argmin(delta))
        ri, ei = divmod(flat, delta.shape[1])
        order.insert(ei + 1, remaining.pop(ri))

    t = np.asarray(order, dtype=np.int64)
    deadline = None
    if budget is not None and budget.time_limit is not None:
        deadline = time.perf_counter() + budget.time_limit
    max_moves = budget.max_sweeps if budget is not None else None
    lower = ~np.triu(np.ones((k - 2, k - 2), dtype=bool), k=1)
    moves = 0
    while True:
        applied = _two_opt_round(t, dmat, lower)
        if applied == 0:
            delta, move = _best_or_opt(t, dmat)
            if delta >= -MOVE_EPS:
                break
            t = _apply_move(t, move)
            applied = 1
        moves += applied
        if max_moves is not None and moves >= max_moves:
            break
        if deadline is not None and time.perf_counter() > deadline:
            break
    return t


def solve_open_path_batch(problems, budget: Budget | None = None, seed: int = 0, *,
                          workers: int | None = None) -> list[np.ndarray]:
    """Element-wise :func:`solve_open_path` over independent concurrent tasks."""
    return run_ordered(lambda p: solve_open_path(p, budget, seed), problems, workers=workers)


def solve_open_path_exhaustive(p: OpenPathProblem) -> np.ndarray:
    """Optimal ordering by enumerating all interior permutations (k <= 10)."""
    k = p.k
    if k > 10:
        raise ValueError(f"exhaustive open-path solver refuses more than 10 nodes, got {k}")
    if k < 3:
        return np.arange(k, dtype=np.int64)
    interior = [i for i in range(k) if i != p.start and i != p.end]
    perms = np.array(list(itertools.permutations(interior)), dtype=np.int64)
    orders = np.empty((len(perms), k), dtype=np.int64)
    orders[:, 0] = p.start
    orders[:, 1:-1] = perms
    orders[:, -1] = p.end
    dmat = _distance_matrix(p.coords)
    lengths = dmat[orders[:, :-1], orders[:, 1:]].sum(axis=1)
    return orders[int(np.argmin(lengths))]


class HeuristicOpenPathSolver:
    """Batch solver protocol wrapper around :func:`solve_open_path_batch`.

    Window solves are microseconds-to-milliseconds of numpy work, so the
    default is serial execution; raise ``workers`` only for solvers that
    actually release the GIL or leave the process.
    """

    def __init__(self, budget: Budget | None = None, seed: int = 0,
                 workers: int | None = 1):
        self.budget = budget
        self.seed = seed
        self.workers = workers

    def solve_batch(self, problems) -> list[np.ndarray]:
        return solve_open_path_batch(problems, self.budget, self.seed, workers=self.workers)


class ExhaustiveOpenPathSolver:
    """Batch solver that enumerates every interior ordering (tiny windows only)."""

    def solve_batch(self, problems) -> list[np.ndarray]:
        return [solve_open_path_exhaustive(p) for p in problems]
