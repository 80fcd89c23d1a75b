"""Path phase: sliding-window extraction and re-optimization of sub-paths.

A tour is cut into consecutive non-overlapping windows of a configured
length. Each window is an open path with fixed first and last node; a batch
solver reorders the interior on normalized coordinates and a candidate is
accepted only when it is strictly shorter, so the tour never gets worse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .instances import Instance, require_valid_tour, tour_length
from .openpath import OpenPathProblem

log = logging.getLogger(__name__)

ACCEPT_EPS = 1e-12

__all__ = [
    "MergeError",
    "PathPhaseConfig",
    "SubPath",
    "SubPathSolver",
    "divide_solution",
    "kappa_step",
    "merge_subpaths",
    "normalize_subpath",
    "open_length",
    "optimize_subpath_batch",
    "run_path_phase",
]


class MergeError(RuntimeError):
    """Sub-paths do not cover the tour exactly once."""


@dataclass(frozen=True, eq=False)
class SubPath:
    """A window of the tour; first and last node are fixed endpoints.

    ``passthrough`` marks the trailing remainder window, which is carried
    along unchanged.
    """

    nodes: np.ndarray
    length: float
    passthrough: bool = False


@dataclass(frozen=True)
class PathPhaseConfig:
    """Window lengths and per-length round counts, applied in order."""

    lengths: tuple[int, ...] = (50, 20, 10)
    iters: tuple[int, ...] = (25, 10, 5)

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(v) for v in self.lengths))
        object.__setattr__(self, "iters", tuple(int(v) for v in self.iters))
        if len(self.lengths) != len(self.iters):
            raise ValueError("lengths and iters must have the same arity")
        if not self.lengths:
            raise ValueError("need at least one (length, iters) pair")
        if any(v < 1 for v in self.lengths) or any(v < 1 for v in self.iters):
            raise ValueError("lengths and iters must all be >= 1")


class SubPathSolver(Protocol):
    """Batch solver for fixed-endpoint sub-paths on normalized coordinates.

    ``solve_batch`` returns one ordering per problem (a permutation of
    0..k-1 with the endpoints kept in place) or ``None`` for a per-item
    failure.
    """

    def solve_batch(self, problems: list[OpenPathProblem]) -> list[np.ndarray | None]:
        ...


def open_length(inst: Instance, nodes) -> float:
    """Length of the open path visiting ``nodes`` in order."""
    pts = inst.coords[np.asarray(nodes, dtype=np.int64)]
    d = pts[1:] - pts[:-1]
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def kappa_step(window: int, iters: int) -> int:
    """Window-offset advance per round: max(1, floor(window / iters))."""
    return max(1, window // iters)


def divide_solution(order, window: int, kappa: int, inst: Instance) -> list[SubPath]:
    """Cut the tour into consecutive windows of ``window`` nodes.

    Windows start at cyclic position ``kappa`` (1-based) and do not overlap;
    a trailing remainder shorter than ``window`` is emitted flagged as
    pass-through.
    """
    if window < 3:
        raise ValueError(f"window length must be >= 3, got {window}")
    arr = require_valid_tour(inst, order)
    n = len(arr)
    off = (int(kappa) - 1) % n
    rot = np.roll(arr, -off)
    out = []
    pos = 0
    while pos < n:
        chunk = rot[pos:pos + window]
        out.append(SubPath(nodes=chunk.copy(), length=open_length(inst, chunk),
                           passthrough=len(chunk) < window))
        pos += window
    return out


def normalize_subpath(sp: SubPath, inst: Instance) -> np.ndarray:
    """Map the sub-path's coordinates into [0,1]^2.

    Uses a single uniform scale from the instance-global bounding box, so
    aspect ratio and relative distances are preserved.
    """
    x_min, x_max, y_min, y_max = inst.bbox
    denom = max(x_max - x_min, y_max - y_min)
    if denom <= 0:
        raise ValueError("degenerate bounding box: all nodes coincide")
    pts = inst.coords[sp.nodes]
    return (pts - (x_min, y_min)) / denom


def optimize_subpath_batch(sps: list[SubPath], solver: SubPathSolver, inst: Instance, *,
                           errors: list | None = None) -> list[SubPath]:
    """Re-solve every non-pass-through window; keep candidates that are shorter.

    Acceptance compares unnormalized lengths and is strict (1e-12 guard). A
    solver response with wrong endpoints or node set is a per-window contract
    error: the original window is kept and the error is logged (and appended
    to ``errors`` when given).
    """
    targets = [i for i, sp in enumerate(sps) if not sp.passthrough and len(sp.nodes) >= 3]
    problems = [
        OpenPathProblem(normalize_subpath(sps[i], inst), 0, len(sps[i].nodes) - 1)
        for i in targets
    ]
    orders = solver.solve_batch(problems)
    if len(orders) != len(problems):
        raise RuntimeError(
            f"sub-path solver returned {len(orders)} results for {len(problems)} problems")
    out = list(sps)
    for i, order in zip(targets, orders):
        sp = sps[i]
        k = len(sp.nodes)
        problem = None
        if order is None:
            problem = "solver reported an error"
        else:
            arr = np.asarray(order, dtype=np.int64).ravel()
            if (arr.shape != (k,) or arr[0] != 0 or arr[-1] != k - 1
                    or not np.array_equal(np.sort(arr), np.arange(k))):
                problem = f"ordering is not an endpoint-fixed permutation of 0..{k - 1}"
        if problem is not None:
            log.warning("sub-path %d: %s; keeping original", i, problem)
            if errors is not None:
                errors.append((i, problem))
            continue
        cand = sp.nodes[arr]
        cand_len = open_length(inst, cand)
        if cand_len < sp.length - ACCEPT_EPS:
            out[i] = SubPath(nodes=cand, length=cand_len)
    return out


def merge_subpaths(sps: list[SubPath], n: int) -> np.ndarray:
    """Concatenate windows in their original order back into a tour."""
    if not sps:
        raise MergeError("nothing to merge")
    tour = np.concatenate([sp.nodes for sp in sps])
    if tour.size != n or not np.array_equal(np.sort(tour), np.arange(n)):
        counts = np.bincount(tour[(tour >= 0) & (tour < n)], minlength=n)
        raise MergeError(
            f"windows cover {int((counts > 0).sum())} of {n} nodes; "
            f"{int((counts > 1).sum())} duplicated")
    return tour


def run_path_phase(order, cfg: PathPhaseConfig, solver: SubPathSolver, inst: Instance, *,
                   round_lengths: list[float] | None = None,
                   errors: list | None = None) -> np.ndarray:
    """Run every (length, rounds) pair of the schedule over the tour.

    Each round divides at the current window offset, optimizes the windows,
    merges, and advances the offset by max(1, floor(length / rounds)). The
    returned tour is never longer than the input tour.
    """
    tour = require_valid_tour(inst, order)
    n = inst.n
    for window, iters in zip(cfg.lengths, cfg.iters):
        kappa = 1
        step = kappa_step(window, iters)
        for _ in range(iters):
            off = (kappa - 1) % n
            sps = divide_solution(tour, window, kappa, inst)
            sps = optimize_subpath_batch(sps, solver, inst, errors=errors)
            merged = merge_subpaths(sps, n)
            tour = np.roll(merged, off)
            if round_lengths is not None:
                round_lengths.append(tour_length(inst, tour))
            kappa += step
    return tour
