"""Per-node execution: shape inference and kernel dispatch.

Activations flow as f32 [features, n_tok] matrices (columns are tokens),
attention scores as [heads, n_tok, n_kv]. Splittable nodes expose a row
count; a chunk (r0, r1) always covers whole output elements, so chunked
and unchunked execution are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError, ShapeError
from .graph import Graph, Node, OpKind
from .kernels import (
    _add_flat,
    _attn_mix,
    _attn_scores,
    _mul_flat,
    _rmsnorm_cols,
    _rope_cols,
    _scale_flat,
    _silu_flat,
    _softmax_causal_rows,
    dequantize_tensor,
    embed_lookup,
    matmul_into,
)
from .tensor import DType, Tensor

Bindings = dict[str, "Tensor | np.ndarray"]


@dataclass
class ExecContext:
    """One step's worth of bound state shared by all workers."""

    graph: Graph
    bindings: Bindings
    n_tok: int
    n_past: int
    shapes: dict[int, tuple[int, ...]]
    outputs: dict[int, np.ndarray]

    def leaf_value(self, ref: int):
        spec = self.graph.leaves[-ref - 1]
        try:
            return self.bindings[spec.name]
        except KeyError:
            raise GraphError(f"no binding for leaf {spec.name!r}") from None

    def value(self, ref: int):
        return self.outputs[ref] if ref >= 0 else self.leaf_value(ref)


def make_context(graph: Graph, bindings: Bindings) -> ExecContext:
    ids = np.asarray(bindings["token_ids"])
    n_tok = int(ids.shape[0])
    n_past = 0
    for spec in graph.leaves:
        if spec.name.endswith("k_cache"):
            n_past = int(np.asarray(bindings[spec.name]).shape[0])
            break
    ctx = ExecContext(graph, bindings, n_tok, n_past, {}, {})
    _infer_shapes(ctx)
    return ctx


def _leaf_shape(ctx: ExecContext, ref: int) -> tuple[int, ...]:
    v = ctx.leaf_value(ref)
    return tuple(v.shape)


def _infer_shapes(ctx: ExecContext) -> None:
    shapes = ctx.shapes
    for node in ctx.graph.nodes:
        ins = node.inputs
        if node.op == OpKind.EmbedLookup:
            vocab, d = _leaf_shape(ctx, ins[0])
            shapes[node.id] = (d, ctx.n_tok)
        elif node.op == OpKind.MulMat and node.attrs.get("attn") == "scores":
            h = node.attrs["n_heads"]
            shapes[node.id] = (h, ctx.n_tok, ctx.n_past + ctx.n_tok)
        elif node.op == OpKind.MulMat and node.attrs.get("attn") == "mix":
            h = node.attrs["n_heads"]
            shapes[node.id] = (h * node.attrs["head_dim"], ctx.n_tok)
        elif node.op == OpKind.MulMat:
            w_shape = _leaf_shape(ctx, ins[0])
            x_shape = shapes[ins[1]]
            if w_shape[1] != x_shape[0]:
                raise ShapeError(
                    f"node {node.id} ({node.tag}): weight {w_shape} x {x_shape} mismatch"
                )
            shapes[node.id] = (w_shape[0], x_shape[1])
        elif node.op in (OpKind.EltAdd, OpKind.EltMul):
            a, b = shapes[ins[0]], shapes[ins[1]]
            if a != b:
                raise ShapeError(f"node {node.id} ({node.tag}): {a} vs {b}")
            shapes[node.id] = a
        elif node.op in (OpKind.Silu, OpKind.Scale, OpKind.SoftmaxCausal, OpKind.Rope):
            shapes[node.id] = shapes[ins[0]]
        elif node.op == OpKind.RmsNorm:
            shapes[node.id] = shapes[ins[0]]
        else:  # pragma: no cover
            raise GraphError(f"no shape rule for {node.op}")


def split_rows(node: Node, shapes: dict[int, tuple[int, ...]]) -> int:
    """Number of divisible output rows for tensor parallelism; 0 when the
    node must run whole. Attention matmuls split across heads."""
    if node.op != OpKind.MulMat:
        return 0
    if node.attrs.get("attn"):
        return node.attrs["n_heads"]
    return shapes[node.id][0]


def alloc_output(node: Node, ctx: ExecContext) -> np.ndarray:
    out = np.empty(ctx.shapes[node.id], dtype=np.float32)
    ctx.outputs[node.id] = out
    return out


def run_node(node: Node, ctx: ExecContext, r0: int = 0, r1: int | None = None) -> None:
    """Execute one node (or a row chunk of a splittable node) into its
    preallocated output buffer."""
    out = ctx.outputs[node.id]
    ins = node.inputs

    if node.op == OpKind.MulMat:
        attn = node.attrs.get("attn")
        if attn == "scores":
            kcache = _cache_array(ctx.value(ins[0]))
            kcur = ctx.outputs[ins[1]]
            q = ctx.outputs[ins[2]]
            h = node.attrs["n_heads"]
            group = h // node.attrs["n_kv_heads"]
            _attn_scores(
                kcache, kcur, q, out, node.attrs["head_dim"], group,
                r0, h if r1 is None else r1,
            )
        elif attn == "mix":
            vcache = _cache_array(ctx.value(ins[0]))
            vcur = ctx.outputs[ins[1]]
            probs = ctx.outputs[ins[2]]
            h = node.attrs["n_heads"]
            group = h // node.attrs["n_kv_heads"]
            _attn_mix(
                vcache, vcur, probs, out, node.attrs["head_dim"], group,
                r0, h if r1 is None else r1,
            )
        else:
            w = ctx.value(ins[0])
            x = ctx.outputs[ins[1]]
            matmul_into(w, x, out, r0, out.shape[0] if r1 is None else r1)
        return

    # remaining ops always run whole
    if node.op == OpKind.EmbedLookup:
        table = ctx.value(ins[0])
        ids = np.asarray(ctx.value(ins[1]), dtype=np.int64)
        out[:] = embed_lookup(table, ids).T
    elif node.op == OpKind.RmsNorm:
        x = ctx.outputs[ins[0]]
        weight = _norm_vector(ctx.value(ins[1]))
        _rmsnorm_cols(x, weight, np.float32(node.attrs["eps"]), out)
    elif node.op == OpKind.Rope:
        x = ctx.outputs[ins[0]]
        heads = node.attrs["n_heads"]
        head_dim = node.attrs["head_dim"]
        positions = ctx.n_past + np.arange(ctx.n_tok, dtype=np.int64)
        x3 = x.reshape(heads, head_dim, ctx.n_tok)
        _rope_cols(x3, positions, np.float64(node.attrs["theta"]),
                   out.reshape(heads, head_dim, ctx.n_tok))
    elif node.op == OpKind.Scale:
        x = ctx.outputs[ins[0]]
        _scale_flat(x.reshape(-1), np.float32(node.attrs["factor"]), out.reshape(-1))
    elif node.op == OpKind.SoftmaxCausal:
        x = ctx.outputs[ins[0]]
        n_past = x.shape[2] - x.shape[1]
        for h in range(x.shape[0]):
            _softmax_causal_rows(x[h], n_past, out[h])
    elif node.op == OpKind.EltAdd:
        _add_flat(ctx.outputs[ins[0]].reshape(-1), ctx.outputs[ins[1]].reshape(-1),
                  out.reshape(-1))
    elif node.op == OpKind.EltMul:
        _mul_flat(ctx.outputs[ins[0]].reshape(-1), ctx.outputs[ins[1]].reshape(-1),
                  out.reshape(-1))
    elif node.op == OpKind.Silu:
        _silu_flat(ctx.outputs[ins[0]].reshape(-1), out.reshape(-1))
    else:  # pragma: no cover
        raise GraphError(f"no executor for {node.op}")


def _cache_array(v) -> np.ndarray:
    arr = v.data if isinstance(v, Tensor) else v
    return np.ascontiguousarray(arr, dtype=np.float32)


_norm_cache: dict[int, np.ndarray] = {}


def _norm_vector(v) -> np.ndarray:
    """Norm weights as a contiguous f32 vector (dequantized once per tensor)."""
    if isinstance(v, np.ndarray):
        return v
    if v.dtype == DType.F32:
        return v.data
    key = id(v)
    got = _norm_cache.get(key)
    if got is None:
        got = dequantize_tensor(v).reshape(-1)
        _norm_cache[key] = got
    return got


def input_nbytes(ctx: ExecContext, ref: int) -> int:
    """Byte size of a node input as it would cross a backend boundary."""
    v = ctx.value(ref)
    return v.nbytes if isinstance(v, (Tensor, np.ndarray)) else 0
