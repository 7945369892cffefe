"""Autoregressive inference: prefill, per-token decode with a KV cache,
greedy sampling, and throughput metrics.

The KV cache lives outside the compute graph. Each step binds read-only
views of the first n_past cache rows to the per-layer cache leaves, runs
the graph, then appends the step's rotated keys and fresh values back
into the cache. Prompts are token-id sequences; there is no tokenizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContextOverflowError, GenerationTimeout, ShapeError
from .graph import Graph, OpKind
from .model import ModelConfig, WeightSet, build_llama, gen_synthetic_weights, preset_config
from .profiler import Phase, ProfileRecord
from .scheduler import AccelModel, SchedulerKind, WorkerPool, assign_backends, run
from .tensor import DType


class KvCache:
    """Per-layer K and V rows of shape [ctx_len, kv_dim]; rows beyond
    n_past are never read."""

    def __init__(self, config: ModelConfig):
        self.ctx_len = config.ctx_len
        self.n_past = 0
        self.k = [
            np.zeros((config.ctx_len, config.kv_dim), dtype=np.float32)
            for _ in range(config.n_layers)
        ]
        self.v = [
            np.zeros((config.ctx_len, config.kv_dim), dtype=np.float32)
            for _ in range(config.n_layers)
        ]

    def reset(self) -> None:
        self.n_past = 0

    def append(self, layer: int, k_cols: np.ndarray, v_cols: np.ndarray) -> None:
        n = k_cols.shape[1]
        self.k[layer][self.n_past : self.n_past + n] = k_cols.T
        self.v[layer][self.n_past : self.n_past + n] = v_cols.T

    def advance(self, n: int) -> None:
        if self.n_past + n > self.ctx_len:
            raise ContextOverflowError(
                f"cache holds {self.n_past} of {self.ctx_len} rows; cannot add {n}"
            )
        self.n_past += n

    def view(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        return self.k[layer][: self.n_past], self.v[layer][: self.n_past]


@dataclass
class GenMetrics:
    prefill_seconds: float
    decode_seconds: float
    prompt_tokens: int
    generated_tokens: int
    prefill_tps: float
    decode_tps: float


@dataclass
class StepTrace:
    phase: str
    records: list[ProfileRecord]


def greedy_sample(logits: np.ndarray) -> int:
    """Argmax token id; ties break toward the lowest id."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise ValueError("cannot sample from empty logits")
    return int(np.argmax(logits))


class InferenceEngine:
    """One generation session: owns a graph, weights, KV cache, and a
    worker pool. Sessions are independent; a session must be driven
    from one thread at a time."""

    def __init__(
        self,
        config: ModelConfig,
        weights: WeightSet,
        scheduler: SchedulerKind | str = SchedulerKind.Sequential,
        n_threads: int = 1,
        accel: AccelModel | None = None,
        backend_policy: str | None = None,
        collect_trace: bool = True,
    ):
        if n_threads < 1:
            raise ValueError("n_threads must be >= 1")
        self.config = config
        self.weights = weights
        self.kind = SchedulerKind(scheduler)
        self.n_threads = n_threads
        self.accel = accel
        if self.kind == SchedulerKind.Hybrid and accel is None:
            raise ValueError("Hybrid scheduling requires an AccelModel")
        self.collect_trace = collect_trace

        self.graph: Graph = build_llama(config, weights)
        if backend_policy is None:
            backend_policy = (
                "weight-matmuls-even-layers" if self.kind == SchedulerKind.Hybrid else "all-main"
            )
        assign_backends(self.graph, backend_policy)

        self._static = {name: t for name, t in weights.named_tensors()}
        self._k_nodes, self._v_nodes = self._find_cache_sources()
        self._logits_node = self.graph.outputs[0]
        self.cache = KvCache(config)
        self.steps: list[StepTrace] = []
        self.last_logits: np.ndarray | None = None
        self._pool = WorkerPool(n_threads) if n_threads > 1 else None

    def _find_cache_sources(self) -> tuple[list[int], list[int]]:
        k_nodes = [-1] * self.config.n_layers
        v_nodes = [-1] * self.config.n_layers
        for node in self.graph.nodes:
            if node.layer < 0:
                continue
            if node.op == OpKind.Rope and node.tag == "Kcur":
                k_nodes[node.layer] = node.id
            elif node.op == OpKind.MulMat and node.tag == "Vcur":
                v_nodes[node.layer] = node.id
        return k_nodes, v_nodes

    # -- stepping -------------------------------------------------------------

    def _bindings(self, token_ids: np.ndarray) -> dict:
        b = dict(self._static)
        b["token_ids"] = token_ids
        for i in range(self.config.n_layers):
            k, v = self.cache.view(i)
            b[f"blk.{i}.k_cache"] = k
            b[f"blk.{i}.v_cache"] = v
        return b

    def _step(self, token_ids: np.ndarray, phase: Phase) -> np.ndarray:
        report = run(
            self.graph,
            self._bindings(token_ids),
            self.kind,
            self.n_threads,
            self.accel,
            pool=self._pool,
            phase=phase.value,
        )
        for i in range(self.config.n_layers):
            self.cache.append(i, report.outputs[self._k_nodes[i]], report.outputs[self._v_nodes[i]])
        self.cache.advance(len(token_ids))
        if self.collect_trace:
            self.steps.append(StepTrace(phase.value, report.records))
        self.last_logits = report.outputs[self._logits_node][:, -1].copy()
        return self.last_logits

    def prefill(self, prompt: list[int] | np.ndarray) -> np.ndarray:
        """Process the whole prompt as one batch; returns final-position
        logits of length vocab."""
        ids = np.asarray(prompt, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ShapeError("prompt must be a non-empty 1-D token sequence")
        if ids.size > self.config.ctx_len:
            raise ContextOverflowError(
                f"prompt of {ids.size} tokens exceeds context length {self.config.ctx_len}"
            )
        if self.cache.n_past != 0:
            raise ShapeError("prefill requires an empty cache; call reset() first")
        return self._step(ids, Phase.PREFILL)

    def decode_step(self, token: int) -> np.ndarray:
        """Single-column pass; appends one K/V row per layer."""
        if self.cache.n_past >= self.config.ctx_len:
            raise ContextOverflowError(
                f"context exhausted at {self.config.ctx_len} tokens"
            )
        return self._step(np.asarray([token], dtype=np.int64), Phase.DECODE)

    def generate(
        self,
        prompt: list[int] | np.ndarray,
        n_gen: int,
        deadline: float | None = None,
    ) -> tuple[list[int], GenMetrics]:
        """Prefill once, then n_gen greedy decode steps. `deadline` is an
        absolute time.monotonic() stamp checked between steps."""
        prompt = np.asarray(prompt, dtype=np.int64)
        if prompt.size + n_gen > self.config.ctx_len:
            raise ContextOverflowError(
                f"{prompt.size} prompt + {n_gen} generated tokens exceed "
                f"context length {self.config.ctx_len}"
            )
        self.reset()
        t0 = time.perf_counter()
        logits = self.prefill(prompt)
        prefill_seconds = time.perf_counter() - t0

        tokens: list[int] = []
        t1 = time.perf_counter()
        for _ in range(n_gen):
            if deadline is not None and time.monotonic() > deadline:
                raise GenerationTimeout(f"deadline passed after {len(tokens)} tokens")
            tok = greedy_sample(logits)
            tokens.append(tok)
            logits = self.decode_step(tok)
        decode_seconds = time.perf_counter() - t1

        metrics = GenMetrics(
            prefill_seconds=prefill_seconds,
            decode_seconds=decode_seconds,
            prompt_tokens=int(prompt.size),
            generated_tokens=n_gen,
            prefill_tps=prompt.size / prefill_seconds if prefill_seconds > 0 else 0.0,
            decode_tps=n_gen / decode_seconds if n_gen > 0 and decode_seconds > 0 else 0.0,
        )
        return tokens, metrics

    # -- housekeeping ----------------------------------------------------------

    def reset(self) -> None:
        self.cache.reset()
        self.steps.clear()

    def trace_records(self) -> list[ProfileRecord]:
        return [rec for step in self.steps for rec in step.records]

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()
            self._pool = None

    def __enter__(self) -> "InferenceEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def engine_from_preset(
    name: str,
    dtype: DType = DType.F16,
    seed: int = 42,
    **kwargs,
) -> InferenceEngine:
    """Convenience constructor: preset config + synthetic weights."""
    config = preset_config(name, dtype)
    weights = gen_synthetic_weights(config, seed)
    return InferenceEngine(config, weights, **kwargs)
