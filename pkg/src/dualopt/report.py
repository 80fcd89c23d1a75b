"""Run reports: objective/gap/time rows plus JSON, CSV, and markdown output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

__all__ = [
    "InstanceResult",
    "RunReport",
    "compute_gap",
    "emit_report",
    "read_report",
    "render_markdown",
]

COLUMNS = ("Instance", "Obj.", "Gap(%)", "Time")


def compute_gap(obj: float, baseline: float) -> float:
    """Percentage difference of an objective versus a baseline objective."""
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return (obj - baseline) / baseline * 100.0


@dataclass
class InstanceResult:
    """Per-instance outcome; ``error`` is set when a phase aborted the run."""

    name: str
    n: int
    obj: float | None = None
    time_s: float | None = None
    seed: int | None = None
    phases: dict = field(default_factory=dict)
    baseline_obj: float | None = None
    gap: float | None = None
    tour_file: str | None = None
    contract_errors: int = 0
    error: str | None = None


@dataclass
class RunReport:
    rows: list[InstanceResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        done = [r for r in self.rows if r.error is None and r.obj is not None]
        agg: dict = {"instances": len(self.rows), "solved": len(done),
                     "failed": len(self.rows) - len(done)}
        if done:
            agg["mean_obj"] = sum(r.obj for r in done) / len(done)
            times = [r.time_s for r in done if r.time_s is not None]
            if times:
                agg["mean_time_s"] = sum(times) / len(times)
            gaps = [r.gap for r in done if r.gap is not None]
            if gaps:
                agg["mean_gap_pct"] = sum(gaps) / len(gaps)
        return agg


def _fmt_time(t: float | None) -> str:
    if t is None:
        return "-"
    if t >= 60:
        return f"{t / 60:.1f}m"
    return f"{t:.1f}s"


def render_markdown(report: RunReport) -> str:
    """Fixed-column markdown table: Instance, Obj., Gap(%), Time."""
    lines = ["| " + " | ".join(COLUMNS) + " |",
             "|" + "|".join(["---"] * len(COLUMNS)) + "|"]
    for r in report.rows:
        if r.error is not None:
            lines.append(f"| {r.name} | error | - | {_fmt_time(r.time_s)} |")
            continue
        gap = f"{r.gap:.2f}" if r.gap is not None else "-"
        lines.append(f"| {r.name} | {r.obj:.2f} | {gap} | {_fmt_time(r.time_s)} |")
    agg = report.aggregate()
    if "mean_obj" in agg:
        gap = f"{agg['mean_gap_pct']:.2f}" if "mean_gap_pct" in agg else "-"
        lines.append(f"| mean | {agg['mean_obj']:.2f} | {gap} | "
                     f"{_fmt_time(agg.get('mean_time_s'))} |")
    return "\n".join(lines) + "\n"


def _render_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in report.rows:
        writer.writerow([
            r.name,
            "" if r.obj is None else repr(r.obj),
            "" if r.gap is None else repr(r.gap),
            "" if r.time_s is None else repr(r.time_s),
        ])
    return buf.getvalue()


def emit_report(report: RunReport, fmt: str, path: str | Path) -> Path:
    """Write the report as ``json``, ``csv``, or ``markdown``; returns the path."""
    path = Path(path)
    if fmt == "json":
        payload = {
            "config": report.config,
            "rows": [asdict(r) for r in report.rows],
            "aggregate": report.aggregate(),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        path.write_text(_render_csv(report))
    elif fmt == "markdown":
        path.write_text(render_markdown(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report(path: str | Path) -> RunReport:
    """Load a JSON report back into a :class:`RunReport`."""
    payload = json.loads(Path(path).read_text())
    rows = [InstanceResult(**row) for row in payload.get("rows", [])]
    return RunReport(rows=rows, config=payload.get("config", {}))
