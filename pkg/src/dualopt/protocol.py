"""Newline-delimited JSON protocol for out-of-process sub-path solvers.

One request per line: ``{"id": ..., "coords": [[x, y], ...], "start": 0,
"end": k-1}``. One response per line: ``{"id": ..., "order": [...]}`` with
``order[0] == 0`` and ``order[k-1] == k-1``, or ``{"id": ..., "error": ...}``
for a per-request failure. Responses are order-preserving per connection.
Transports: stdio of a spawned child process, or TCP.
"""

from __future__ import annotations

import json
import logging
import socket
import subprocess
import sys
import threading

import numpy as np

from .openpath import OpenPathProblem

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """Connection-level failure: dead peer, non-JSON output, or lost responses."""


def encode_request(rid, problem: OpenPathProblem) -> str:
    return json.dumps(
        {"id": rid, "coords": problem.coords.tolist(),
         "start": int(problem.start), "end": int(problem.end)},
        separators=(",", ":")) + "\n"


def handle_request_line(line: str, solve_fn) -> dict:
    """Turn one request line into a response dict; never raises.

    ``solve_fn(coords, start, end)`` returns an ordering. Unknown request
    fields are ignored for forward compatibility.
    """
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
        order = solve_fn(coords, start, end)
        return {"id": rid, "order": [int(v) for v in order]}
    except KeyError as e:
        return {"id": rid, "error": f"missing field {e.args[0]!r}"}
    except Exception as e:
        return {"id": rid, "error": str(e)}


def serve_stream(solve_fn, rfile, wfile) -> None:
    """Answer requests line by line until EOF."""
    for line in rfile:
        if not line.strip():
            continue
        resp = handle_request_line(line, solve_fn)
        wfile.write(json.dumps(resp, separators=(",", ":")) + "\n")
        wfile.flush()


def serve_stdio(solve_fn) -> None:
    """Serve on stdin/stdout; returns cleanly at EOF."""
    serve_stream(solve_fn, sys.stdin, sys.stdout)


def serve_tcp(solve_fn, host: str, port: int, *, once: bool = False,
              ready: threading.Event | None = None) -> None:
    """Serve connections sequentially on a TCP socket.

    ``once=True`` handles a single connection and returns (used by tests);
    ``ready`` is set once the socket is listening.
    """
    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready.set()
        while True:
            conn, _ = srv.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8")
                wfile = conn.makefile("w", encoding="utf-8")
                serve_stream(solve_fn, rfile, wfile)
            if once:
                return


class _LineClient:
    """Shared request/response plumbing over a pair of text streams."""

    def __init__(self):
        self._rid = 0

    def _streams(self):
        raise NotImplementedError

    def _peer_died(self) -> str:
        return "peer closed the stream"

    def solve_batch(self, problems) -> list[np.ndarray | None]:
        if not problems:
            return []
        wfile, rfile = self._streams()
        requests = []
        for p in problems:
            requests.append((self._rid, encode_request(self._rid, p)))
            self._rid += 1

        def write_all():
            try:
                for _, line in requests:
                    wfile.write(line)
                wfile.flush()
            except (BrokenPipeError, OSError):
                pass  # reader will surface the dead peer

        writer = threading.Thread(target=write_all, daemon=True)
        writer.start()
        responses: dict = {}
        try:
            for _ in requests:
                line = rfile.readline()
                if not line:
                    raise ProtocolError(self._peer_died())
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ProtocolError(f"invalid JSON from solver: {e}") from None
                if not isinstance(obj, dict) or "id" not in obj:
                    raise ProtocolError(f"response without id: {line.strip()!r}")
                responses[obj["id"]] = obj
        finally:
            writer.join(timeout=10)
        out: list[np.ndarray | None] = []
        for rid, _ in requests:
            obj = responses.get(rid)
            if obj is None:
                raise ProtocolError(f"no response for request id {rid}")
            if obj.get("error") is not None:
                log.warning("solver error for request %s: %s", rid, obj["error"])
                out.append(None)
                continue
            order = obj.get("order")
            if not isinstance(order, list):
                log.warning("request %s: response carries no order list", rid)
                out.append(None)
                continue
            out.append(np.asarray(order, dtype=np.int64))
        return out


class CommandSubPathSolver(_LineClient):
    """Sub-path solver backed by a child process spoken to over stdio."""

    def __init__(self, argv: list[str]):
        super().__init__()
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def _streams(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        return self._proc.stdin, self._proc.stdout

    def _peer_died(self) -> str:
        code = self._proc.poll() if self._proc else None
        return f"solver process closed its stream (exit status {code})"

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
        except Exception:
            self._proc.kill()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpSubPathSolver(_LineClient):
    """Sub-path solver reached over a TCP connection."""

    def __init__(self, host: str, port: int):
        super().__init__()
        self.host = host
        self.port = port
        self._sock: socket.socket | None = None
        self._rfile = None
        self._wfile = None

    def _streams(self):
        if self._sock is None:
            self._sock = socket.create_connection((self.host, self.port))
            self._rfile = self._sock.makefile("r", encoding="utf-8")
            self._wfile = self._sock.makefile("w", encoding="utf-8")
        return self._wfile, self._rfile

    def _peer_died(self) -> str:
        return f"solver at {self.host}:{self.port} closed the connection"

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
