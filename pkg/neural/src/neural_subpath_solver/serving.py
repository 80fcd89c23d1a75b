"""Batch inference and the newline-delimited JSON solver protocol.

Requests: ``{"id": ..., "coords": [[x, y], ...], "start": 0, "end": k-1}``,
one per line. Responses echo the id with either ``order`` (a permutation of
0..k-1 keeping the endpoints in place) or ``error``. Responses are emitted in
request order; unknown request fields are ignored. Inference runs both
rollout directions and keeps the shorter path.
"""

from __future__ import annotations

import json
import logging
import socket
import sys
import threading

import numpy as np
import torch

from .model import PolicyModel, rollout

log = logging.getLogger(__name__)


def infer_batch(model: PolicyModel, problems: list[tuple[np.ndarray, int, int]]
                ) -> list[np.ndarray]:
    """Greedy best-of-two orderings for (coords, start, end) problems.

    Problems are grouped by node count so each group is one batched forward
    pass; results come back in input order.
    """
    out: list[np.ndarray | None] = [None] * len(problems)
    by_size: dict[int, list[int]] = {}
    for i, (coords, _, _) in enumerate(problems):
        by_size.setdefault(len(coords), []).append(i)
    for k, idxs in by_size.items():
        coords = torch.from_numpy(
            np.stack([np.asarray(problems[i][0], dtype=np.float64) for i in idxs])).float()
        start = torch.tensor([problems[i][1] for i in idxs], dtype=torch.long)
        dest = torch.tensor([problems[i][2] for i in idxs], dtype=torch.long)
        with torch.no_grad():
            ord_f, _, len_f = rollout(model, coords, start, dest, mode="greedy")
            ord_b, _, len_b = rollout(model, coords, dest, start, mode="greedy")
        reversed_b = torch.flip(ord_b, dims=(1,))
        pick_b = len_b < len_f
        for row, i in enumerate(idxs):
            best = reversed_b[row] if pick_b[row] else ord_f[row]
            out[i] = best.numpy().astype(np.int64)
    return out  # type: ignore[return-value]


def handle_request_line(line: str, model: PolicyModel) -> dict:
    """One request line to one response dict; never raises."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        return {"id": None, "error": f"malformed JSON: {e}"}
    if not isinstance(obj, dict):
        return {"id": None, "error": "request must be a JSON object"}
    rid = obj.get("id")
    if not isinstance(rid, (int, str)):
        echo = rid if isinstance(rid, (int, str, float, type(None))) else None
        return {"id": echo, "error": "missing or malformed request id"}
    try:
        coords = np.asarray(obj["coords"], dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must be a list of [x, y] pairs")
        k = len(coords)
        start = int(obj.get("start", 0))
        end = int(obj.get("end", k - 1))
        if not (0 <= start < k and 0 <= end < k):
            raise ValueError(f"endpoints {start}, {end} outside 0..{k - 1}")
        if k >= 2 and start == end:
            raise ValueError("start and end must differ")
        if k < 3:
            order = list(range(k))
        else:
            order = [int(v) for v in infer_batch(model, [(coords, start, end)])[0]]
        return {"id": rid, "order": order}
    except KeyError as e:
        return {"id": rid, "error": f"missing field {e.args[0]!r}"}
    except Exception as e:
        return {"id": rid, "error": str(e)}


def serve_stream(model: PolicyModel, rfile, wfile) -> None:
    """Answer requests line by line until EOF; responses in request order."""
    for line in rfile:
        if not line.strip():
            continue
        resp = handle_request_line(line, model)
        wfile.write(json.dumps(resp, separators=(",", ":")) + "\n")
        wfile.flush()


def serve_stdio(model: PolicyModel) -> None:
    """Serve on stdin/stdout; returns cleanly at EOF (stdout is protocol-only)."""
    serve_stream(model, sys.stdin, sys.stdout)


def serve_tcp(model: PolicyModel, host: str, port: int, *, once: bool = False,
              ready: threading.Event | None = None) -> None:
    """Serve TCP connections sequentially; ``once`` handles one and returns."""
    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready.set()
        while True:
            conn, peer = srv.accept()
            log.info("connection from %s", peer)
            with conn:
                serve_stream(model,
                             conn.makefile("r", encoding="utf-8"),
                             conn.makefile("w", encoding="utf-8"))
            if once:
                return
