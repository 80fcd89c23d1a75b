"""Euclidean TSP instances, tours, and the file formats around them.

Coordinates are stored at double precision and distances are true Euclidean
reals. The TSPLIB convention of rounding each edge to the nearest integer is
available behind the ``rounded`` flag of :func:`tour_length` for parity with
external solvers that expect it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Instance",
    "TourCheck",
    "TourValidationError",
    "TsplibParseError",
    "generate_random",
    "load_tsplib",
    "nearest_neighbor",
    "parse_tsplib",
    "random_insertion",
    "read_tour",
    "require_valid_tour",
    "save_tsplib",
    "serialize_tsplib",
    "tour_length",
    "validate_tour",
    "write_tour",
]


class TsplibParseError(ValueError):
    """Malformed TSPLIB content; remembers the offending line."""

    def __init__(self, message: str, line_no: int | None = None, line: str | None = None):
        if line_no is not None:
            message = f"{message} (line {line_no}: {line!r})"
        super().__init__(message)
        self.line_no = line_no
        self.line = line


@dataclass(frozen=True)
class TourCheck:
    """Outcome of :func:`validate_tour`; truthy iff the tour is valid."""

    ok: bool
    duplicates: tuple[int, ...] = ()
    missing: tuple[int, ...] = ()
    out_of_range: tuple[int, ...] = ()

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.out_of_range:
            parts.append(f"out-of-range indices {list(self.out_of_range)}")
        if self.duplicates:
            parts.append(f"duplicated indices {list(self.duplicates)}")
        if self.missing:
            parts.append(f"missing indices {list(self.missing)}")
        return "; ".join(parts)


class TourValidationError(ValueError):
    """A node sequence that is not a permutation of the instance's nodes."""

    def __init__(self, report: TourCheck):
        super().__init__(f"invalid tour: {report.describe()}")
        self.report = report


@dataclass(frozen=True, eq=False)
class Instance:
    """An immutable set of 2D node coordinates; the problem statement.

    Attributes:
        name: Identifier used in file names and reports.
        coords: (n, 2) float64 array, made read-only on construction.
    """

    name: str
    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
        if coords.shape[0] < 1:
            raise ValueError("an instance needs at least one node")
        if not np.isfinite(coords).all():
            raise ValueError("all coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return int(self.coords.shape[0])

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) over all nodes."""
        xs, ys = self.coords[:, 0], self.coords[:, 1]
        return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())


def parse_tsplib(text: str) -> Instance:
    """Parse TSPLIB content with EUC_2D coordinates into an :class:`Instance`.

    Only ``EDGE_WEIGHT_TYPE: EUC_2D`` with a ``NODE_COORD_SECTION`` is
    accepted; anything else raises :class:`TsplibParseError` naming the
    offending line. 1-based file indices are mapped to 0-based node ids.
    """
    name = "unnamed"
    dimension: int | None = None
    weight_type: str | None = None
    coords: np.ndarray | None = None
    lines = text.splitlines()
    n_lines = len(lines)
    i = 0
    while i < n_lines:
        raw = lines[i]
        line = raw.strip()
        i += 1
        if not line:
            continue
        if line.upper() == "EOF":
            break
        if line.upper().startswith("NODE_COORD_SECTION"):
            if dimension is None:
                raise TsplibParseError("NODE_COORD_SECTION before DIMENSION", i, raw)
            if weight_type is None:
                raise TsplibParseError("NODE_COORD_SECTION before EDGE_WEIGHT_TYPE", i, raw)
            coords = np.empty((dimension, 2))
            filled = np.zeros(dimension, dtype=bool)
            seen = 0
            while seen < dimension:
                if i >= n_lines:
                    raise TsplibParseError(
                        f"dimension mismatch: expected {dimension} coordinate lines, found {seen}",
                        i, "<end of file>")
                raw = lines[i]
                line = raw.strip()
                i += 1
                if not line:
                    continue
                if line.upper() == "EOF":
                    raise TsplibParseError(
                        f"dimension mismatch: expected {dimension} coordinate lines, found {seen}",
                        i, raw)
                parts = line.split()
                if len(parts) != 3:
                    raise TsplibParseError("expected 'index x y'", i, raw)
                try:
                    idx = int(parts[0])
                    x, y = float(parts[1]), float(parts[2])
                except ValueError:
                    raise TsplibParseError("expected 'index x y'", i, raw) from None
                if not 1 <= idx <= dimension:
                    raise TsplibParseError(f"node index {idx} outside 1..{dimension}", i, raw)
                if filled[idx - 1]:
                    raise TsplibParseError(f"duplicate node index {idx}", i, raw)
                filled[idx - 1] = True
                coords[idx - 1] = (x, y)
                seen += 1
            while i < n_lines:
                nxt = lines[i].strip()
                i += 1
                if not nxt:
                    continue
                if nxt.upper() == "EOF":
                    break
                try:
                    int(nxt.split()[0])
                except ValueError:
                    break
                raise TsplibParseError(
                    "dimension mismatch: extra coordinate line after declared DIMENSION",
                    i, lines[i - 1])
            break
        if ":" in line:
            key, _, value = line.partition(":")
            key = key.strip().upper()
            value = value.strip()
            if key == "NAME":
                name = value
            elif key == "DIMENSION":
                try:
                    dimension = int(value)
                except ValueError:
                    raise TsplibParseError("DIMENSION must be an integer", i, raw) from None
                if dimension < 1:
                    raise TsplibParseError("DIMENSION must be positive", i, raw)
            elif key == "EDGE_WEIGHT_TYPE":
                weight_type = value.upper()
                if weight_type != "EUC_2D":
                    raise TsplibParseError(
                        f"unsupported EDGE_WEIGHT_TYPE {value!r}; only EUC_2D is supported", i, raw)
            continue
        raise TsplibParseError("malformed header line", i, raw)
    if dimension is None:
        raise TsplibParseError("missing DIMENSION header")
    if weight_type is None:
        raise TsplibParseError("missing EDGE_WEIGHT_TYPE header")
    if coords is None:
        raise TsplibParseError("missing NODE_COORD_SECTION")
    return Instance(name=name, coords=coords)


def serialize_tsplib(inst: Instance) -> str:
    """Render an instance in TSPLIB EUC_2D format.

    Coordinates are written with shortest round-trip precision so that
    ``parse_tsplib(serialize_tsplib(inst))`` reproduces them exactly.
    """
    out = [
        f"NAME : {inst.name}",
        "TYPE : TSP",
        f"DIMENSION : {inst.n}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    for i, (x, y) in enumerate(inst.coords, start=1):
        out.append(f"{i} {float(x)!r} {float(y)!r}")
    out.append("EOF")
    return "\n".join(out) + "\n"


def load_tsplib(path: str | Path) -> Instance:
    return parse_tsplib(Path(path).read_text())


def save_tsplib(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(serialize_tsplib(inst))


def generate_random(n: int, seed: int) -> Instance:
    """n nodes i.i.d. uniform on the unit square.

    Drawn from numpy's PCG64 generator seeded directly with ``seed``, so the
    same (n, seed) pair reproduces a bit-identical instance on any platform.
    """
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return Instance(name=f"rnd{n}-{seed}", coords=rng.random((n, 2)))


def validate_tour(inst: Instance, order) -> TourCheck:
    """Check that ``order`` visits each node index exactly once."""
    arr = np.asarray(order, dtype=np.int64).ravel()
    n = inst.n
    oor = arr[(arr < 0) | (arr >= n)]
    in_range = arr[(arr >= 0) & (arr < n)]
    counts = np.bincount(in_range, minlength=n) if in_range.size else np.zeros(n, dtype=np.int64)
    dup = np.flatnonzero(counts > 1)
    missing = np.flatnonzero(counts == 0)
    ok = oor.size == 0 and dup.size == 0 and missing.size == 0 and arr.size == n
    return TourCheck(
        ok=ok,
        duplicates=tuple(int(v) for v in dup),
        missing=tuple(int(v) for v in missing),
        out_of_range=tuple(dict.fromkeys(int(v) for v in oor)),
    )


def require_valid_tour(inst: Instance, order) -> np.ndarray:
    """Return ``order`` as an int64 array, raising if it is not a tour."""
    arr = np.asarray(order, dtype=np.int64).ravel()
    report = validate_tour(inst, arr)
    if not report:
        raise TourValidationError(report)
    return arr


def tour_length(inst: Instance, order, *, rounded: bool = False) -> float:
    """Closed-tour Euclidean length, accumulated from index 0 forward.

    ``rounded=True`` applies the TSPLIB integer convention: each edge is
    rounded to the nearest integer before summation.
    """
    arr = require_valid_tour(inst, order)
    pts = inst.coords[arr]
    diff = pts - np.roll(pts, -1, axis=0)
    seg = np.hypot(diff[:, 0], diff[:, 1])
    if rounded:
        seg = np.rint(seg)
    return float(seg.sum())


def random_insertion(inst: Instance, seed: int) -> np.ndarray:
    """Build a tour by inserting nodes in random order at the cheapest position.

    Deterministic for a given (instance, seed); the node order comes from the
    same PCG64 generator as :func:`generate_random`.
    """
    n = inst.n
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    coords = inst.coords
    tour = [int(v) for v in perm[:3]]
    for v in perm[3:]:
        pts = coords[tour]
        nxt = np.roll(pts, -1, axis=0)
        d_av = np.hypot(*(pts - coords[v]).T)
        d_vb = np.hypot(*(nxt - coords[v]).T)
        d_ab = np.hypot(*(pts - nxt).T)
        delta = d_av + d_vb - d_ab
        i = int(np.argmin(delta))
        tour.insert(i + 1, int(v))
    return np.asarray(tour, dtype=np.int64)


def nearest_neighbor(inst: Instance, start: int = 0) -> np.ndarray:
    """Greedy nearest-neighbor tour construction from ``start``."""
    n = inst.n
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    coords = inst.coords
    visited = np.zeros(n, dtype=bool)
    tour = [start]
    visited[start] = True
    cur = start
    for _ in range(n - 1):
        d = np.hypot(*(coords - coords[cur]).T)
        d[visited] = np.inf
        cur = int(np.argmin(d))
        visited[cur] = True
        tour.append(cur)
    return np.asarray(tour, dtype=np.int64)


def write_tour(path: str | Path, inst: Instance, order) -> float:
    """Persist a tour as newline-delimited 0-based indices.

    The header line is ``TOUR <n> <length>``; returns the written length.
    """
    arr = require_valid_tour(inst, order)
    length = tour_length(inst, arr)
    with open(path, "w") as fh:
        fh.write(f"TOUR {inst.n} {length!r}\n")
        fh.write("\n".join(str(int(v)) for v in arr))
        fh.write("\n")
    return length


def read_tour(path: str | Path) -> tuple[np.ndarray, float]:
    """Read a tour file written by :func:`write_tour`; returns (order, length)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("TOUR "):
        raise ValueError(f"{path}: missing 'TOUR <n> <length>' header")
    parts = lines[0].split()
    if len(parts) != 3:
        raise ValueError(f"{path}: malformed header {lines[0]!r}")
    n, length = int(parts[1]), float(parts[2])
    order = np.array([int(ln) for ln in lines[1:] if ln.strip()], dtype=np.int64)
    if order.size != n:
        raise ValueError(f"{path}: header declares {n} nodes, found {order.size}")
    return order, length
