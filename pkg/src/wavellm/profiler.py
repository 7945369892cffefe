"""Per-node wall-time attribution and aggregation.

Workers append records to private buffers during a run; everything here
is single-threaded post-processing of the merged trace. Timestamps come
from the monotonic nanosecond clock captured immediately around kernel
invocation, so each record carries a few hundred nanoseconds of capture
overhead; desk-scale ops are microseconds and up, which keeps shares
honest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from enum import Enum

from .graph import Graph


class Phase(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"


WEIGHT_MATMUL_TAGS = ("Qcur", "Kcur", "Vcur", "kqv_out", "ffn_gate", "ffn_up", "ffn_down")

TRACE_FIELDS = ("node_id", "op", "tag", "phase", "worker", "backend", "start_ns", "end_ns")


@dataclass
class ProfileRecord:
    node_id: int
    op: str
    tag: str
    phase: str
    worker: int
    backend: str
    start_ns: int
    end_ns: int


@dataclass
class OpStat:
    op: str
    ns: int
    calls: int
    share: float


@dataclass
class OpBreakdown:
    phase: str
    total_ns: int
    ops: list[OpStat]

    def share_of(self, op: str) -> float:
        for stat in self.ops:
            if stat.op == op:
                return stat.share
        return 0.0


def aggregate_by_op(records: list[ProfileRecord], phase: str | Phase) -> OpBreakdown:
    """Sum end-start per op kind within a phase; share = kind / phase total."""
    phase = Phase(phase).value
    totals: dict[str, int] = {}
    calls: dict[str, int] = {}
    for rec in records:
        if rec.phase != phase:
            continue
        totals[rec.op] = totals.get(rec.op, 0) + (rec.end_ns - rec.start_ns)
        calls[rec.op] = calls.get(rec.op, 0) + 1
    if not totals:
        raise ValueError(f"no records for phase {phase!r}")
    total = sum(totals.values())
    ops = [
        OpStat(op, ns, calls[op], ns / total)
        for op, ns in sorted(totals.items(), key=lambda kv: -kv[1])
    ]
    return OpBreakdown(phase, total, ops)


def aggregate_by_matmul_tag(records: list[ProfileRecord], phase: str | Phase) -> dict[str, int]:
    """Total nanoseconds per weight-matmul tag, summed across layers."""
    phase = Phase(phase).value
    totals = {tag: 0 for tag in WEIGHT_MATMUL_TAGS}
    for rec in records:
        if rec.phase == phase and rec.op == "MulMat" and rec.tag in totals:
            totals[rec.tag] += rec.end_ns - rec.start_ns
    return totals


def check_schedule(records: list[ProfileRecord], graph: Graph) -> list[tuple[int, int]]:
    """Validity of one step's trace: every node starts at or after all of
    its node inputs have finished. Returns offending (node, input) pairs."""
    end_by_node = {rec.node_id: rec.end_ns for rec in records}
    start_by_node = {rec.node_id: rec.start_ns for rec in records}
    bad = []
    for rec in records:
        node = graph.nodes[rec.node_id]
        for ref in node.inputs:
            if ref >= 0 and start_by_node[rec.node_id] < end_by_node[ref]:
                bad.append((rec.node_id, ref))
    return bad


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def export_trace_csv(records: list[ProfileRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for rec in records:
            writer.writerow([getattr(rec, f) for f in TRACE_FIELDS])


def import_trace_csv(path: str) -> list[ProfileRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trace csv is missing columns: {sorted(missing)}")
        for row in reader:
            records.append(
                ProfileRecord(
                    node_id=int(row["node_id"]),
                    op=row["op"],
                    tag=row["tag"],
                    phase=row["phase"],
                    worker=int(row["worker"]),
                    backend=row["backend"],
                    start_ns=int(row["start_ns"]),
                    end_ns=int(row["end_ns"]),
                )
            )
    return records


def export_trace_json(records: list[ProfileRecord], path: str) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in records], fh)


def import_trace_json(path: str) -> list[ProfileRecord]:
    with open(path) as fh:
        return [ProfileRecord(**row) for row in json.load(fh)]


def export(obj, path: str, format: str = "csv") -> None:
    """Write a trace (list of records) or an OpBreakdown to disk."""
    if isinstance(obj, OpBreakdown):
        with open(path, "w") as fh:
            json.dump(breakdown_dict(obj), fh, indent=2)
        return
    if format == "csv":
        export_trace_csv(obj, path)
    elif format == "json":
        export_trace_json(obj, path)
    else:
        raise ValueError(f"unknown export format {format!r}")


def breakdown_dict(b: OpBreakdown) -> dict:
    return {
        "phase": b.phase,
        "total_ns": b.total_ns,
        "ops": [asdict(s) for s in b.ops],
    }


def write_profile_json(records: list[ProfileRecord], path: str) -> None:
    """Combined profile file: per-phase op breakdowns plus weight-matmul
    tag totals. Phases with no records are omitted."""
    phases = []
    matmul = []
    for phase in (Phase.PREFILL, Phase.DECODE):
        if not any(r.phase == phase.value for r in records):
            continue
        phases.append(breakdown_dict(aggregate_by_op(records, phase)))
        matmul.append({"phase": phase.value, "tags": aggregate_by_matmul_tag(records, phase)})
    with open(path, "w") as fh:
        json.dump({"phases": phases, "matmul": matmul}, fh, indent=2)
