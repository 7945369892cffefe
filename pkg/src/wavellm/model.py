"""Decoder model assembly: config presets, graph construction, synthetic
weights, and the on-disk model format.

The graph mirrors the reference decoder layout: per layer, an RMSNorm
feeds the Q/K/V projections, rotary encoding is applied to Q and K,
attention scores are scaled and causally softmaxed, the value mix is
projected back and added to the residual stream, then the SwiGLU FFN
(down(silu(gate(x)) * up(x))) with its own norm and residual. The KV
cache never appears as graph nodes; per-step cache views are bound to
the `blk.N.k_cache` / `blk.N.v_cache` leaves by the runtime.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterator

import numpy as np

from .errors import BadMagicError, ShapeError, TruncatedFileError, VersionError
from .graph import Graph, OpKind
from .kernels import quantize_rows
from .tensor import DType, Tensor, buffer_nbytes

WEIGHT_MATMUL_TAGS = ("Qcur", "Kcur", "Vcur", "kqv_out", "ffn_gate", "ffn_up", "ffn_down")

_LAYER_FIELDS = ("attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "w_gate", "w_up", "w_down")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    n_kv_heads: int
    d_ff: int
    vocab: int
    ctx_len: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5
    dtype: DType = DType.F16

    def __post_init__(self) -> None:
        for name in ("n_layers", "d_model", "n_heads", "n_kv_heads", "d_ff", "vocab", "ctx_len"):
            if getattr(self, name) < 1:
                raise ShapeError(f"config field {name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ShapeError("d_model must be divisible by n_heads")
        if self.n_heads % self.n_kv_heads != 0:
            raise ShapeError("n_heads must be divisible by n_kv_heads (GQA)")
        if self.d_ff <= self.d_model:
            raise ShapeError("d_ff must exceed d_model")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def kv_dim(self) -> int:
        return self.n_kv_heads * self.head_dim


PRESETS = {
    "toy": ModelConfig(
        n_layers=4, d_model=256, n_heads=8, n_kv_heads=2, d_ff=1024, vocab=512, ctx_len=128
    ),
    "1b-proportioned": ModelConfig(
        n_layers=16, d_model=2048, n_heads=32, n_kv_heads=8, d_ff=8192, vocab=4096, ctx_len=128
    ),
}


def preset_config(name: str, dtype: DType = DType.F16) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return replace(PRESETS[name], dtype=dtype)


@dataclass
class LayerWeights:
    attn_norm: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_norm: Tensor
    w_gate: Tensor
    w_up: Tensor
    w_down: Tensor


@dataclass
class WeightSet:
    tok_embed: Tensor
    final_norm_w: Tensor
    w_output: Tensor
    layers: list[LayerWeights] = field(default_factory=list)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "tok_embed", self.tok_embed
        for i, lw in enumerate(self.layers):
            for f in _LAYER_FIELDS:
                yield f"blk.{i}.{f}", getattr(lw, f)
        yield "final_norm", self.final_norm_w
        yield "w_output", self.w_output

    def validate(self, config: ModelConfig) -> None:
        for name, tensor in self.named_tensors():
            expected = _expected_shapes(config)[name]
            if tensor.shape != expected:
                raise ShapeError(
                    f"weight {name} has shape {tensor.shape}, config wants {expected}"
                )
        if len(self.layers) != config.n_layers:
            raise ShapeError(
                f"weight set has {len(self.layers)} layers, config wants {config.n_layers}"
            )


def _expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, kv, ff = config.d_model, config.kv_dim, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_embed": (config.vocab, d),
        "final_norm": (d,),
        "w_output": (config.vocab, d),
    }
    for i in range(config.n_layers):
        shapes[f"blk.{i}.attn_norm"] = (d,)
        shapes[f"blk.{i}.wq"] = (d, d)
        shapes[f"blk.{i}.wk"] = (kv, d)
        shapes[f"blk.{i}.wv"] = (kv, d)
        shapes[f"blk.{i}.wo"] = (d, d)
        shapes[f"blk.{i}.ffn_norm"] = (d,)
        shapes[f"blk.{i}.w_gate"] = (ff, d)
        shapes[f"blk.{i}.w_up"] = (ff, d)
        shapes[f"blk.{i}.w_down"] = (d, ff)
    return shapes


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def build_llama(config: ModelConfig, weights: WeightSet | None = None) -> Graph:
    """Assemble the decoder compute graph for this config.

    The graph is shape-polymorphic over prompt length and cache depth;
    `weights`, when given, is validated against the config up front.
    """
    if weights is not None:
        weights.validate(config)

    g = Graph()
    ids_leaf = g.add_leaf("token_ids")
    embed_leaf = g.add_leaf("tok_embed", config.dtype)
    layer_leaves = []
    for i in range(config.n_layers):
        leaves = {f: g.add_leaf(f"blk.{i}.{f}") for f in _LAYER_FIELDS}
        leaves["k_cache"] = g.add_leaf(f"blk.{i}.k_cache", DType.F32)
        leaves["v_cache"] = g.add_leaf(f"blk.{i}.v_cache", DType.F32)
        layer_leaves.append(leaves)
    final_norm_leaf = g.add_leaf("final_norm", DType.F32)
    output_leaf = g.add_leaf("w_output", config.dtype)

    attn_attrs = {
        "n_heads": config.n_heads,
        "n_kv_heads": config.n_kv_heads,
        "head_dim": config.head_dim,
    }
    norm_attrs = {"eps": config.norm_eps}

    inp = g.add_node(OpKind.EmbedLookup, (embed_leaf, ids_leaf), tag="inpL")
    for i, lv in enumerate(layer_leaves):
        cur = g.add_node(OpKind.RmsNorm, (inp, lv["attn_norm"]), dict(norm_attrs), "norm_inp", i)
        qcur = g.add_node(OpKind.MulMat, (lv["wq"], cur), tag="Qcur", layer=i, is_weight_matmul=True)
        kcur = g.add_node(OpKind.MulMat, (lv["wk"], cur), tag="Kcur", layer=i, is_weight_matmul=True)
        vcur = g.add_node(OpKind.MulMat, (lv["wv"], cur), tag="Vcur", layer=i, is_weight_matmul=True)
        qrot = g.add_node(
            OpKind.Rope,
            (qcur,),
            {"n_heads": config.n_heads, "head_dim": config.head_dim, "theta": config.rope_theta},
            "Qcur",
            i,
        )
        krot = g.add_node(
            OpKind.Rope,
            (kcur,),
            {"n_heads": config.n_kv_heads, "head_dim": config.head_dim, "theta": config.rope_theta},
            "Kcur",
            i,
        )
        kq = g.add_node(
            OpKind.MulMat, (lv["k_cache"], krot, qrot), {"attn": "scores", **attn_attrs}, "kq", i
        )
        kq_scaled = g.add_node(
            OpKind.Scale,
            (kq,),
            {"factor": 1.0 / math.sqrt(config.head_dim)},
            "kq_scaled",
            i,
        )
        probs = g.add_node(OpKind.SoftmaxCausal, (kq_scaled,), tag="kq_soft_max", layer=i)
        kqv = g.add_node(
            OpKind.MulMat, (lv["v_cache"], vcur, probs), {"attn": "mix", **attn_attrs}, "kqv", i
        )
        attn_proj = g.add_node(
            OpKind.MulMat, (lv["wo"], kqv), tag="kqv_out", layer=i, is_weight_matmul=True
        )
        ffn_inp = g.add_node(OpKind.EltAdd, (attn_proj, inp), tag="ffn_inp", layer=i)
        ffn_norm = g.add_node(
            OpKind.RmsNorm, (ffn_inp, lv["ffn_norm"]), dict(norm_attrs), "ffn_norm", i
        )
        gate = g.add_node(
            OpKind.MulMat, (lv["w_gate"], ffn_norm), tag="ffn_gate", layer=i, is_weight_matmul=True
        )
        up = g.add_node(
            OpKind.MulMat, (lv["w_up"], ffn_norm), tag="ffn_up", layer=i, is_weight_matmul=True
        )
        act = g.add_node(OpKind.Silu, (gate,), tag="ffn_silu", layer=i)
        gated = g.add_node(OpKind.EltMul, (act, up), tag="ffn_gate_par", layer=i)
        down = g.add_node(
            OpKind.MulMat, (lv["w_down"], gated), tag="ffn_down", layer=i, is_weight_matmul=True
        )
        inp = g.add_node(OpKind.EltAdd, (down, ffn_inp), tag="ffn_out", layer=i)

    final_norm = g.add_node(OpKind.RmsNorm, (inp, final_norm_leaf), dict(norm_attrs), "final_norm")
    logits = g.add_node(
        OpKind.MulMat, (output_leaf, final_norm), tag="final_out", is_weight_matmul=True
    )
    g.mark_output(logits)
    return g


# ---------------------------------------------------------------------------
# Synthetic weights
# ---------------------------------------------------------------------------


def gen_synthetic_weights(config: ModelConfig, seed: int) -> WeightSet:
    """Deterministic pseudorandom weights ~ uniform(-1/sqrt(d_in), 1/sqrt(d_in))
    per tensor (PCG64 stream, fixed tensor order), matrices encoded to
    config.dtype. Norm vectors stay F32, matching runtime convention."""
    rng = np.random.default_rng(seed)

    def draw(name: str, shape: tuple[int, ...], dtype: DType) -> Tensor:
        d_in = shape[-1]
        bound = np.float32(1.0 / math.sqrt(d_in))
        vals = (rng.random(shape, dtype=np.float32) * 2 - 1) * bound
        return encode_tensor(name, vals, dtype)

    shapes = _expected_shapes(config)
    tok_embed = draw("tok_embed", shapes["tok_embed"], config.dtype)
    layers = []
    for i in range(config.n_layers):
        fields = {}
        for f in _LAYER_FIELDS:
            name = f"blk.{i}.{f}"
            dt = DType.F32 if f.endswith("norm") else config.dtype
            fields[f] = draw(name, shapes[name], dt)
        layers.append(LayerWeights(**fields))
    final_norm = draw("final_norm", shapes["final_norm"], DType.F32)
    w_output = draw("w_output", shapes["w_output"], config.dtype)
    ws = WeightSet(tok_embed, final_norm, w_output, layers)
    ws.validate(config)
    return ws


def encode_tensor(name: str, values: np.ndarray, dtype: DType) -> Tensor:
    """Encode an f32 array into a Tensor of the requested storage dtype."""
    values = np.ascontiguousarray(values, dtype=np.float32)
    shape = values.shape
    if dtype == DType.F32:
        data = values.copy()
    elif dtype == DType.F16:
        data = values.astype(np.float16)
    else:
        rows = values.reshape(-1, shape[-1])
        data = quantize_rows(rows, dtype)
        if len(shape) == 1:
            data = data.reshape(-1)
        else:
            data = data.reshape(*shape[:-1], -1)
    t = Tensor(name, shape, dtype, data)
    t.data.flags.writeable = False
    return t


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------
#
# Little-endian throughout:
#   8B  magic "WAVELLM\0"
#   u32 version (=1)
#   7*u32 config: n_layers d_model n_heads n_kv_heads d_ff vocab ctx_len
#   f64 rope_theta, f64 norm_eps, u8 dtype code
#   u32 tensor count, then per tensor:
#     u16 name length, name bytes, u8 dtype code, u8 ndim, ndim*u32 dims,
#     u64 payload length, payload bytes

MAGIC = b"WAVELLM\x00"
FORMAT_VERSION = 1
_DTYPE_CODES = {DType.F32: 0, DType.F16: 1, DType.Q8_0: 2, DType.Q4_0: 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_CONFIG_FMT = "<7IddB"


def save_model(path: str, config: ModelConfig, weights: WeightSet) -> None:
    weights.validate(config)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(
            struct.pack(
                _CONFIG_FMT,
                config.n_layers,
                config.d_model,
                config.n_heads,
                config.n_kv_heads,
                config.d_ff,
                config.vocab,
                config.ctx_len,
                config.rope_theta,
                config.norm_eps,
                _DTYPE_CODES[config.dtype],
            )
        )
        tensors = list(weights.named_tensors())
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            raw = t.data.tobytes()
            nm = name.encode()
            fh.write(struct.pack("<H", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<BB", _DTYPE_CODES[t.dtype], len(t.shape)))
            fh.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated model file while reading {what}")
    return buf


def load_model(path: str) -> tuple[ModelConfig, WeightSet]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported model version {version}")
        cfg_raw = _read_exact(fh, struct.calcsize(_CONFIG_FMT), "config")
        vals = struct.unpack(_CONFIG_FMT, cfg_raw)
        config = ModelConfig(
            n_layers=vals[0],
            d_model=vals[1],
            n_heads=vals[2],
            n_kv_heads=vals[3],
            d_ff=vals[4],
            vocab=vals[5],
            ctx_len=vals[6],
            rope_theta=vals[7],
            norm_eps=vals[8],
            dtype=_CODE_DTYPES[vals[9]],
        )
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        by_name: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode()
            code, ndim = struct.unpack("<BB", _read_exact(fh, 2, name))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, name))
            (payload,) = struct.unpack("<Q", _read_exact(fh, 8, name))
            raw = _read_exact(fh, payload, f"tensor {name}")
            by_name[name] = _tensor_from_raw(name, dims, _CODE_DTYPES[code], raw)
    return config, _weights_from_tensors(config, by_name)


def _tensor_from_raw(name: str, shape: tuple[int, ...], dtype: DType, raw: bytes) -> Tensor:
    if len(raw) != buffer_nbytes(shape, dtype):
        raise TruncatedFileError(f"tensor {name} payload has wrong size")
    if dtype == DType.F32:
        data = np.frombuffer(raw, dtype=np.float32).reshape(shape).copy()
    elif dtype == DType.F16:
        data = np.frombuffer(raw, dtype=np.float16).reshape(shape).copy()
    else:
        row_bytes = shape[-1] // 32 * dtype.block_bytes
        arr = np.frombuffer(raw, dtype=np.uint8)
        if len(shape) == 1:
            data = arr.copy()
        else:
            data = arr.reshape(*shape[:-1], row_bytes).copy()
    t = Tensor(name, shape, dtype, data)
    t.data.flags.writeable = False
    return t


def _weights_from_tensors(config: ModelConfig, by_name: dict[str, Tensor]) -> WeightSet:
    def take(name: str) -> Tensor:
        if name not in by_name:
            raise TruncatedFileError(f"model file is missing tensor {name}")
        return by_name[name]

    layers = []
    for i in range(config.n_layers):
        layers.append(
            LayerWeights(**{f: take(f"blk.{i}.{f}") for f in _LAYER_FIELDS})
        )
    ws = WeightSet(take("tok_embed"), take("final_norm"), take("w_output"), layers)
    ws.validate(config)
    return ws
