"""Profiler: aggregation math, schedule validity checking, export formats."""

import csv
import json

import pytest

from wavellm.graph import Graph, OpKind
from wavellm.profiler import (
    ProfileRecord,
    WEIGHT_MATMUL_TAGS,
    aggregate_by_matmul_tag,
    aggregate_by_op,
    check_schedule,
    export,
    export_trace_csv,
    export_trace_json,
    import_trace_csv,
    import_trace_json,
    write_profile_json,
)
from wavellm.runtime import InferenceEngine

from conftest import TINY


def _rec(node_id=0, op="MulMat", tag="Qcur", phase="prefill", start=0, end=100, worker=0):
    return ProfileRecord(node_id, op, tag, phase, worker, "main", start, end)


@pytest.fixture(scope="module")
def traced_engine(tiny_weights):
    with InferenceEngine(TINY, tiny_weights) as eng:
        eng.generate([1, 2, 3, 4, 5, 6, 7], 4)
        yield eng


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_single_record_share_is_one():
    b = aggregate_by_op([_rec(end=100)], "prefill")
    assert b.total_ns == 100
    assert b.ops[0].op == "MulMat" and b.ops[0].share == 1.0


def test_empty_phase_errors():
    with pytest.raises(ValueError):
        aggregate_by_op([_rec(phase="prefill")], "decode")


def test_shares_sum_to_one(traced_engine):
    for phase in ("prefill", "decode"):
        b = aggregate_by_op(traced_engine.trace_records(), phase)
        assert sum(s.share for s in b.ops) == pytest.approx(1.0, abs=1e-9)


def test_aggregate_totals_match_raw_records(traced_engine):
    records = traced_engine.trace_records()
    b = aggregate_by_op(records, "decode")
    raw = sum(r.end_ns - r.start_ns for r in records if r.phase == "decode")
    assert b.total_ns == raw
    assert sum(s.ns for s in b.ops) == raw


def test_all_seven_matmul_tags_present(traced_engine):
    for phase in ("prefill", "decode"):
        tags = aggregate_by_matmul_tag(traced_engine.trace_records(), phase)
        assert set(tags) == set(WEIGHT_MATMUL_TAGS)
        assert all(ns > 0 for ns in tags.values())


def test_every_node_once_per_step(traced_engine):
    n_nodes = len(traced_engine.graph)
    for step in traced_engine.steps:
        assert sorted(r.node_id for r in step.records) == list(range(n_nodes))


def test_tag_aggregation_excludes_rope_and_score_matmuls():
    records = [
        _rec(op="MulMat", tag="Qcur", end=10),
        _rec(node_id=1, op="Rope", tag="Qcur", end=1000),
        _rec(node_id=2, op="MulMat", tag="kq", end=1000),
    ]
    tags = aggregate_by_matmul_tag(records, "prefill")
    assert tags["Qcur"] == 10


# ---------------------------------------------------------------------------
# schedule validity
# ---------------------------------------------------------------------------


def test_check_schedule_flags_violation():
    g = Graph()
    leaf = g.add_leaf("x")
    a = g.add_node(OpKind.Silu, (leaf,))
    b = g.add_node(OpKind.Silu, (a,))
    ok = [_rec(node_id=a, start=0, end=10), _rec(node_id=b, start=10, end=20)]
    assert check_schedule(ok, g) == []
    bad = [_rec(node_id=a, start=0, end=10), _rec(node_id=b, start=5, end=20)]
    assert check_schedule(bad, g) == [(b, a)]


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def test_trace_csv_roundtrip(tmp_path, traced_engine):
    records = traced_engine.trace_records()
    path = tmp_path / "trace.csv"
    export_trace_csv(records, str(path))
    back = import_trace_csv(str(path))
    assert back == records
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["node_id", "op", "tag", "phase", "worker", "backend",
                       "start_ns", "end_ns"]
    assert len(rows) == len(records) + 1


def test_trace_json_roundtrip(tmp_path, traced_engine):
    records = traced_engine.trace_records()
    path = tmp_path / "trace.json"
    export_trace_json(records, str(path))
    assert import_trace_json(str(path)) == records


def test_empty_trace_exports_valid_file(tmp_path):
    path = tmp_path / "empty.csv"
    export_trace_csv([], str(path))
    assert import_trace_csv(str(path)) == []


def test_export_dispatcher(tmp_path, traced_engine):
    records = traced_engine.trace_records()
    export(records, str(tmp_path / "t.csv"), "csv")
    export(records, str(tmp_path / "t.json"), "json")
    breakdown = aggregate_by_op(records, "decode")
    export(breakdown, str(tmp_path / "b.json"))
    data = json.loads((tmp_path / "b.json").read_text())
    assert data["phase"] == "decode"
    assert {"op", "ns", "calls", "share"} <= set(data["ops"][0])
    with pytest.raises(ValueError):
        export(records, str(tmp_path / "t.xml"), "xml")


def test_profile_json_schema(tmp_path, traced_engine):
    path = tmp_path / "profile.json"
    write_profile_json(traced_engine.trace_records(), str(path))
    data = json.loads(path.read_text())
    phases = {p["phase"] for p in data["phases"]}
    assert phases == {"prefill", "decode"}
    for p in data["phases"]:
        assert sum(op["share"] for op in p["ops"]) == pytest.approx(1.0, abs=1e-9)
    assert {m["phase"] for m in data["matmul"]} == {"prefill", "decode"}
