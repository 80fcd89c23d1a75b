"""Non-gating quality signal: trained model vs the main solver's heuristic.

Both solvers are queried over the stdio line protocol on the same k=10
problems and compared against an exhaustive enumeration. The comparison is
reported and flagged, not asserted: contracts gate, quality does not.
"""

import itertools
import json
import subprocess
import sys

import numpy as np
import pytest

pytest.importorskip("dualopt", reason="main solver package not installed")


def exhaustive_length(coords: np.ndarray) -> float:
    k = len(coords)
    perms = np.array(list(itertools.permutations(range(1, k - 1))), dtype=np.int64)
    orders = np.empty((len(perms), k), dtype=np.int64)
    orders[:, 0] = 0
    orders[:, 1:-1] = perms
    orders[:, -1] = k - 1
    diff = coords[:, None, :] - coords[None, :, :]
    dmat = np.hypot(diff[..., 0], diff[..., 1])
    return float(dmat[orders[:, :-1], orders[:, 1:]].sum(axis=1).min())


def query_server(cmd: list[str], problems: list[np.ndarray]) -> list[np.ndarray]:
    lines = [json.dumps({"id": i, "coords": p.tolist(), "start": 0, "end": len(p) - 1})
             for i, p in enumerate(problems)]
    res = subprocess.run(cmd, input="\n".join(lines) + "\n", capture_output=True,
                         text=True, timeout=600)
    assert res.returncode == 0, res.stderr[-1000:]
    responses = {}
    for line in res.stdout.strip().splitlines():
        obj = json.loads(line)
        assert "order" in obj, obj
        responses[obj["id"]] = np.asarray(obj["order"], dtype=np.int64)
    return [responses[i] for i in range(len(problems))]


def path_length(coords: np.ndarray, order: np.ndarray) -> float:
    pts = coords[order]
    return float(np.hypot(*(pts[1:] - pts[:-1]).T).sum())


def test_quality_signal_vs_heuristic(trained_k10):
    rng = np.random.Generator(np.random.PCG64(2025))
    problems = [rng.random((10, 2)) for _ in range(64)]
    neural_cmd = [sys.executable, "-m", "neural_subpath_solver.cli", "serve",
                  str(trained_k10["path"]), "--transport", "stdio"]
    heur_cmd = [sys.executable, "-m", "dualopt.cli", "serve", "--transport", "stdio"]

    gaps = {}
    for name, cmd in (("neural", neural_cmd), ("heuristic", heur_cmd)):
        orders = query_server(cmd, problems)
        total_gap = 0.0
        for coords, order in zip(problems, orders):
            assert order[0] == 0 and order[-1] == 9
            assert sorted(order.tolist()) == list(range(10))
            total_gap += path_length(coords, order) / exhaustive_length(coords) - 1.0
        gaps[name] = 100.0 * total_gap / len(problems)

    verdict = ("ok" if gaps["neural"] < gaps["heuristic"]
               else "FLAGGED: neural gap not below heuristic gap")
    print(f"QUALITY-SIGNAL k=10 mean gap: neural {gaps['neural']:.2f}% "
          f"vs heuristic {gaps['heuristic']:.2f}% -> {verdict}")
