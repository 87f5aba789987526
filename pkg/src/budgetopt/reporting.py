"""Run summaries and trace files: CSV summaries, JSONL step traces."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .optim import STEP_RECORD_FIELDS, RunTrace, StepRecord

NEVER = "never"


@dataclass
class SummaryRow:
    scenario: str
    method: str
    seed: int
    final_gap_pct: float
    mean_abs_violation: float
    steps_to_1pct: int | str
    max_retraction_iterations: int
    wall_clock_s: float
    status: str = "ok"

    @classmethod
    def from_trace(cls, scenario: str, trace: RunTrace, timing: bool = True) -> "SummaryRow":
        steps = trace.steps_to_gap(1.0)
        gap = trace.final_gap_pct
        return cls(
            scenario=scenario,
            method=trace.method,
            seed=trace.seed,
            final_gap_pct=math.nan if gap is None else gap,
            mean_abs_violation=trace.mean_abs_violation() if trace.records else math.nan,
            steps_to_1pct=NEVER if steps is None else steps,
            max_retraction_iterations=trace.max_retraction_iterations(),
            wall_clock_s=round(trace.wall_clock, 3) if timing else 0.0,
        )

    @classmethod
    def failed(cls, scenario: str, method: str, seed: int, error: str) -> "SummaryRow":
        return cls(scenario, method, seed, math.nan, math.nan, NEVER, 0, 0.0, f"error: {error}")


SUMMARY_COLUMNS = tuple(f.name for f in fields(SummaryRow))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in asdict(row).values()])
    return buf.getvalue()


def write_summary_csv(path, rows) -> None:
    Path(path).write_text(summary_csv(rows))


def read_summary_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace_jsonl(path, trace: RunTrace) -> None:
    Path(path).write_text(trace.to_jsonl())


def read_trace_jsonl(path) -> list[StepRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            data = json.loads(line)
            if set(data) != set(STEP_RECORD_FIELDS):
                raise ValueError(f"trace line has fields {sorted(data)}")
            records.append(StepRecord(**data))
    return records


def violation_table_csv(trace: RunTrace) -> str:
    """One row per step with a column per constraint violation ``C_j - b_j``."""
    q = len(trace.records[0].constraint_violations) if trace.records else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step"] + [f"violation_{j:02d}" for j in range(q)])
    for r in trace.records:
        writer.writerow([r.step] + [repr(v) for v in r.constraint_violations])
    return buf.getvalue()
