"""Graph execution strategies over a fixed worker pool.

Four strategies share one executor and produce bit-identical outputs:

* Sequential: nodes in id order; a matmul may split its rows across the
  pool (intra-op threading), everything else runs on the calling thread.
* GraphParallel: wavefront levels run in order with a barrier between
  levels; each node in a level goes to one worker, no intra-op split.
* GraphTensorParallel: as above, plus matmuls split their output rows
  across idle workers at fixed boundaries.
* Hybrid: as above, but nodes assigned to the modeled accelerator pay a
  launch latency before compute, and tensors crossing backends pay a
  transfer delay unless memory is unified. Only time is modeled; the
  numerics are untouched.

The caller's thread doubles as worker 0, so single-threaded runs never
touch locks. Within a level, tasks are built in ascending node id and
dealt round-robin, which makes traces reproducible.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GraphError
from .execute import ExecContext, alloc_output, make_context, run_node, split_rows
from .graph import Backend, Graph, Node, compute_wavefronts
from .profiler import ProfileRecord

_MIN_SPLIT_ROWS = 8  # no chunk smaller than this many rows


class SchedulerKind(str, Enum):
    Sequential = "seq"
    GraphParallel = "graph"
    GraphTensorParallel = "graph-tensor"
    Hybrid = "hybrid"


@dataclass(frozen=True)
class AccelModel:
    """Modeled accelerator: dispatch latency, link bandwidth, and a compute
    rate multiplier. Speedups in (0, 1) are realized as busy-waits (the
    accelerator computes slower than the host); values >= 1 cannot shrink
    real wall time and leave timing unchanged, as does 0 (disabled)."""

    launch_latency_us: float = 0.0
    transfer_bandwidth: float = 1e9  # bytes/second
    unified_memory: bool = False
    accel_speedup: float = 1.0

    def __post_init__(self) -> None:
        if self.launch_latency_us < 0 or self.transfer_bandwidth < 0 or self.accel_speedup < 0:
            raise ValueError("AccelModel values must be >= 0")


@dataclass
class ExecutionReport:
    outputs: dict[int, np.ndarray]
    records: list[ProfileRecord]
    wall_seconds: float
    phase: str


BACKEND_POLICIES = ("all-main", "weight-matmuls-even-layers", "all-accel")


def assign_backends(graph: Graph, policy: str) -> Graph:
    """Label every node Main or Accel. Runs during construction, before
    the graph is shared with workers."""
    if policy == "all-main":
        for node in graph.nodes:
            node.backend = Backend.Main
    elif policy == "all-accel":
        for node in graph.nodes:
            node.backend = Backend.Accel
    elif policy == "weight-matmuls-even-layers":
        for node in graph.nodes:
            accel = node.is_weight_matmul and node.layer >= 0 and node.layer % 2 == 0
            node.backend = Backend.Accel if accel else Backend.Main
    else:
        raise ValueError(f"unknown backend policy {policy!r}; have {BACKEND_POLICIES}")
    return graph


# ---------------------------------------------------------------------------
# Worker pool: caller thread is worker 0, helpers are workers 1..n-1
# ---------------------------------------------------------------------------


class WorkerPool:
    def __init__(self, n_workers: int):
        if n_workers < 1:
            raise ValueError("worker pool needs at least one worker")
        self.n_workers = n_workers
        self._cv = threading.Condition()
        self._generation = 0
        self._pending = 0
        self._stop = False
        self._task_lists: list[list] = [[] for _ in range(n_workers)]
        self._runner = None
        self._errors: list[BaseException] = []
        self._threads = [
            threading.Thread(target=self._worker_loop, args=(i,), daemon=True)
            for i in range(1, n_workers)
        ]
        for t in self._threads:
            t.start()

    def _worker_loop(self, idx: int) -> None:
        seen = 0
        while True:
            with self._cv:
                while self._generation == seen and not self._stop:
                    self._cv.wait()
                if self._stop:
                    return
                seen = self._generation
                tasks = self._task_lists[idx]
                runner = self._runner
            try:
                for task in tasks:
                    runner(task, idx)
            except BaseException as exc:  # surfaced on the caller after the level
                with self._cv:
                    self._errors.append(exc)
            with self._cv:
                self._pending -= 1
                if self._pending == 0:
                    self._cv.notify_all()

    def run_level(self, task_lists: list[list], runner) -> None:
        """Execute one level: helpers take lists 1.., the caller runs list 0."""
        if self.n_workers == 1 or all(not lst for lst in task_lists[1:]):
            for task in task_lists[0]:
                runner(task, 0)
            return
        with self._cv:
            for i in range(1, self.n_workers):
                self._task_lists[i] = task_lists[i] if i < len(task_lists) else []
            self._runner = runner
            self._pending = self.n_workers - 1
            self._generation += 1
            self._cv.notify_all()
        for task in task_lists[0]:
            runner(task, 0)
        with self._cv:
            while self._pending > 0:
                self._cv.wait()
            if self._errors:
                err = self._errors[0]
                self._errors.clear()
                raise err

    def close(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        for t in self._threads:
            t.join(timeout=1.0)


# ---------------------------------------------------------------------------
# Level planning
# ---------------------------------------------------------------------------


@dataclass
class _Task:
    node: Node
    r0: int
    r1: int
    chunk: int
    n_chunks: int
    delay_ns: int = 0  # modeled launch + transfer, paid before compute


def _crossing_bytes(node: Node, ctx: ExecContext, unified: bool) -> int:
    if unified:
        return 0
    total = 0
    for ref in node.inputs:
        if ref >= 0 and ctx.graph.nodes[ref].backend != node.backend:
            total += ctx.outputs[ref].nbytes
    return total


def _plan_level(
    level: list[int],
    ctx: ExecContext,
    kind: SchedulerKind,
    n_threads: int,
    accel: AccelModel | None,
) -> list[_Task]:
    graph = ctx.graph
    nodes = [graph.nodes[nid] for nid in level]
    hybrid = kind == SchedulerKind.Hybrid

    # modeled delays first: delayed nodes are dispatched whole
    delays: dict[int, int] = {}
    if hybrid:
        assert accel is not None
        for node in nodes:
            ns = 0
            if node.backend == Backend.Accel:
                ns += int(accel.launch_latency_us * 1000)
            xfer = _crossing_bytes(node, ctx, accel.unified_memory)
            if xfer and accel.transfer_bandwidth > 0:
                ns += int(xfer / accel.transfer_bandwidth * 1e9)
            if ns:
                delays[node.id] = ns

    chunk_counts = {n.id: 1 for n in nodes}
    if kind in (SchedulerKind.GraphTensorParallel, SchedulerKind.Hybrid):
        eligible = [
            n for n in nodes
            if split_rows(n, ctx.shapes) >= 2 * _MIN_SPLIT_ROWS and n.id not in delays
            and not (hybrid and n.backend == Backend.Accel)
        ]
        idle = max(0, n_threads - len(nodes))
        for i in range(idle):
            if not eligible:
                break
            node = eligible[i % len(eligible)]
            chunk_counts[node.id] += 1
        for n in eligible:
            rows = split_rows(n, ctx.shapes)
            chunk_counts[n.id] = min(chunk_counts[n.id], max(1, rows // _MIN_SPLIT_ROWS))
    elif kind == SchedulerKind.Sequential and n_threads > 1:
        for n in nodes:
            rows = split_rows(n, ctx.shapes)
            if rows >= 2 * _MIN_SPLIT_ROWS:
                chunk_counts[n.id] = min(n_threads, max(1, rows // _MIN_SPLIT_ROWS))

    tasks = []
    for node in nodes:
        rows = split_rows(node, ctx.shapes)
        c = chunk_counts[node.id]
        if c <= 1 or rows == 0:
            total = rows if rows else 0
            tasks.append(_Task(node, 0, total or _full_rows(node, ctx), 0, 1,
                               delays.get(node.id, 0)))
            continue
        size = -(-rows // c)  # fixed stride, last chunk may be short
        for ci in range(c):
            r0 = ci * size
            r1 = min(rows, r0 + size)
            if r0 >= r1:
                break
            tasks.append(_Task(node, r0, r1, ci, c))
    return tasks


def _full_rows(node: Node, ctx: ExecContext) -> int:
    rows = split_rows(node, ctx.shapes)
    return rows if rows else 1


def _wait_ns(ns: int) -> None:
    if ns <= 0:
        return
    deadline = time.perf_counter_ns() + ns
    if ns > 200_000:
        time.sleep((ns - 100_000) / 1e9)
    while time.perf_counter_ns() < deadline:
        pass


# ---------------------------------------------------------------------------
# run()
# ---------------------------------------------------------------------------


def run(
    graph: Graph,
    bindings: dict,
    kind: SchedulerKind | str = SchedulerKind.Sequential,
    n_threads: int = 1,
    accel: AccelModel | None = None,
    pool: WorkerPool | None = None,
    phase: str = "prefill",
) -> ExecutionReport:
    """Execute the graph under one strategy. Output tensors are bitwise
    identical across strategies and thread counts."""
    kind = SchedulerKind(kind)
    if n_threads < 1:
        raise ValueError("n_threads must be >= 1")
    if kind == SchedulerKind.Hybrid and accel is None:
        raise ValueError("Hybrid scheduling requires an AccelModel")

    ctx = make_context(graph, bindings)
    if kind == SchedulerKind.Sequential:
        levels = [[nid] for nid in range(len(graph.nodes))]
    else:
        levels = graph_wavefronts(graph).levels

    own_pool = pool is None and n_threads > 1
    if own_pool:
        pool = WorkerPool(n_threads)

    records_by_worker: list[list] = [[] for _ in range(n_threads)]
    speedup_wait = (
        accel is not None and 0 < accel.accel_speedup < 1 and kind == SchedulerKind.Hybrid
    )

    def runner(task: _Task, worker: int) -> None:
        node = task.node
        t0 = time.perf_counter_ns()
        if task.delay_ns:
            _wait_ns(task.delay_ns)
        run_node(node, ctx, task.r0, task.r1)
        if speedup_wait and node.backend == Backend.Accel:
            elapsed = time.perf_counter_ns() - t0 - task.delay_ns
            _wait_ns(int(elapsed * (1.0 / accel.accel_speedup - 1.0)))
        t1 = time.perf_counter_ns()
        records_by_worker[worker].append((node, task.chunk, worker, t0, t1))

    t_begin = time.perf_counter()
    try:
        for level in levels:
            for nid in level:
                alloc_output(graph.nodes[nid], ctx)
            tasks = _plan_level(level, ctx, kind, n_threads, accel)
            if n_threads == 1 or pool is None:
                for task in tasks:
                    runner(task, 0)
            else:
                lists: list[list] = [[] for _ in range(n_threads)]
                for i, task in enumerate(tasks):
                    lists[i % n_threads].append(task)
                pool.run_level(lists, runner)
    finally:
        if own_pool:
            pool.close()
    wall = time.perf_counter() - t_begin

    records = _merge_records(records_by_worker, phase)
    return ExecutionReport(ctx.outputs, records, wall, phase)


def _merge_records(records_by_worker: list[list], phase: str) -> list[ProfileRecord]:
    """One record per node per step: chunk intervals collapse to their span."""
    merged: dict[int, list] = {}
    for buf in records_by_worker:
        for node, chunk, worker, t0, t1 in buf:
            cur = merged.get(node.id)
            if cur is None:
                merged[node.id] = [node, worker if chunk == 0 else -1, t0, t1, chunk]
            else:
                cur[2] = min(cur[2], t0)
                cur[3] = max(cur[3], t1)
                if chunk == 0:
                    cur[1] = worker
    out = []
    for nid in sorted(merged):
        node, worker, t0, t1, _ = merged[nid]
        out.append(
            ProfileRecord(
                node_id=nid,
                op=node.op.name,
                tag=node.tag,
                phase=phase,
                worker=worker,
                backend=node.backend.value,
                start_ns=t0,
                end_ns=t1,
            )
        )
    return out


def graph_wavefronts(graph: Graph):
    """Wavefront schedule, memoized on the graph (immutable once built)."""
    sched = getattr(graph, "_wavefronts", None)
    if sched is None:
        sched = compute_wavefronts(graph)
        graph._wavefronts = sched
    return sched
