"""Numeric kernels and block-quantization codecs.

Every kernel accumulates in 32-bit floats with a fixed, ascending-index
summation order. That order is the determinism contract of the whole
engine: a matmul output element must be bit-identical to the naive
triple loop `acc += dequant(W[i,k]) * X[k,j]` over ascending k, no
matter how output rows are chunked across workers or how many columns
are processed per call. The numba loops below are compiled without
fastmath, so LLVM neither reassociates the additions nor contracts
mul+add into FMA; row blocking only interleaves independent
accumulator chains and never changes a single element's order.

Quantized weights are consumed block-by-block inside the kernels.
F16 weights are widened to F32 in row strips before the shared F32
inner loop runs (no F16 arithmetic anywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ShapeError
from .tensor import QBLOCK, DType, Tensor

# ---------------------------------------------------------------------------
# Lookup tables (read-only, shared by all workers)
# ---------------------------------------------------------------------------

# All 65536 float16 bit patterns widened to float32 (exact).
F16_TABLE = np.arange(65536, dtype=np.uint16).view(np.float16).astype(np.float32)

# Byte -> (low nibble - 8, high nibble - 8) as float32, for Q4 unpacking.
NIB_PAIR = np.empty((256, 2), dtype=np.float32)
NIB_PAIR[:, 0] = (np.arange(256) & 0xF) - 8
NIB_PAIR[:, 1] = (np.arange(256) >> 4) - 8

# Byte reinterpreted as int8, as float32, for Q8 unpacking.
I8_TABLE = np.arange(256, dtype=np.uint8).view(np.int8).astype(np.float32)

_F16_CHUNK_ROWS = 16  # rows widened per strip on the F16 matmul path

# Q4 scale widening: keep every code ratio strictly below 7.5 even after
# the scale is rounded to f16, so clamping at +7 never costs more than
# half a quantization step.
_Q4_WIDEN_LIMIT = 7.5
_Q4_WIDEN_TARGET = 7.46


# ---------------------------------------------------------------------------
# Block codecs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QBlock4:
    """32 weights as one f16 scale plus 4-bit codes; value = (code - 8) * scale."""

    scale: np.float16
    codes: np.ndarray  # uint8[32], each in 0..15

    def encode(self) -> bytes:
        packed = (self.codes[0::2] | (self.codes[1::2] << 4)).astype(np.uint8)
        return self.scale.tobytes() + packed.tobytes()

    @classmethod
    def decode(cls, buf: bytes) -> "QBlock4":
        if len(buf) != 18:
            raise ShapeError(f"Q4_0 block must be 18 bytes, got {len(buf)}")
        scale = np.frombuffer(buf[:2], dtype=np.float16)[0]
        packed = np.frombuffer(buf[2:], dtype=np.uint8)
        codes = np.empty(QBLOCK, dtype=np.uint8)
        codes[0::2] = packed & 0xF
        codes[1::2] = packed >> 4
        return cls(scale, codes)

    def dequantize(self) -> np.ndarray:
        s = np.float32(self.scale)
        return (self.codes.astype(np.int32) - 8).astype(np.float32) * s


@dataclass(frozen=True)
class QBlock8:
    """32 weights as one f16 scale plus signed 8-bit codes; value = code * scale."""

    scale: np.float16
    codes: np.ndarray  # int8[32]

    def encode(self) -> bytes:
        return self.scale.tobytes() + self.codes.astype(np.int8).tobytes()

    @classmethod
    def decode(cls, buf: bytes) -> "QBlock8":
        if len(buf) != 34:
            raise ShapeError(f"Q8_0 block must be 34 bytes, got {len(buf)}")
        scale = np.frombuffer(buf[:2], dtype=np.float16)[0]
        codes = np.frombuffer(buf[2:], dtype=np.int8).copy()
        return cls(scale, codes)

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float32) * np.float32(self.scale)


def _check_block(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != (QBLOCK,):
        raise ShapeError(f"quantization block must hold exactly {QBLOCK} values")
    return values.astype(np.float32, copy=False)


def quantize_q4(values: np.ndarray) -> QBlock4:
    """Quantize one 32-value block to 4 bits.

    The scale is the max-magnitude value divided by -8 (sign preserving),
    then widened when the opposite extreme would otherwise clamp past a
    half step, so the round-trip error stays within |scale| / 2.
    """
    values = _check_block(values)
    packed = _q4_encode_blocks(np.ascontiguousarray(values.reshape(1, QBLOCK)))
    return QBlock4.decode(packed[0].tobytes())


def quantize_q8(values: np.ndarray) -> QBlock8:
    """Quantize one 32-value block to 8 bits: scale = max|v| / 127."""
    values = _check_block(values)
    packed = _q8_encode_blocks(np.ascontiguousarray(values.reshape(1, QBLOCK)))
    return QBlock8.decode(packed[0].tobytes())


@njit(cache=True, nogil=True)
def _q4_block_extrema(blocks, m_out, rmax_out, over_out):
    """Per block: signed max-magnitude value, and the largest value/scale
    ratio with the ideal scale m/-8 (to decide widening)."""
    for b in range(blocks.shape[0]):
        m = blocks[b, 0]
        am = abs(m)
        for k in range(1, 32):
            v = blocks[b, k]
            if abs(v) > am:
                am = abs(v)
                m = v
        m_out[b] = m
        s = m / np.float32(-8.0)
        rmax = np.float32(0.0)
        over = np.float32(0.0)
        if s != 0:
            for k in range(32):
                r = blocks[b, k] / s
                if r > rmax:
                    rmax = r
                    over = blocks[b, k]
        rmax_out[b] = rmax
        over_out[b] = over


@njit(cache=True, nogil=True)
def _q4_pack_codes(blocks, s32, out):
    """code = clamp(round_half_away(v / scale), -8, 7) + 8; zero scale
    encodes every value as code 8. Writes scale + packed nibbles per block."""
    for b in range(blocks.shape[0]):
        s = s32[b]
        for t in range(16):
            if s == 0:
                out[b, 2 + t] = np.uint8(0x88)
                continue
            r0 = blocks[b, 2 * t] / s
            r1 = blocks[b, 2 * t + 1] / s
            q0 = np.int32(np.trunc(r0 + (np.float32(0.5) if r0 >= 0 else np.float32(-0.5))))
            q1 = np.int32(np.trunc(r1 + (np.float32(0.5) if r1 >= 0 else np.float32(-0.5))))
            if q0 < -8:
                q0 = -8
            elif q0 > 7:
                q0 = 7
            if q1 < -8:
                q1 = -8
            elif q1 > 7:
                q1 = 7
            out[b, 2 + t] = np.uint8((q0 + 8) | ((q1 + 8) << 4))


@njit(cache=True, nogil=True)
def _q8_block_amax(blocks, amax_out):
    for b in range(blocks.shape[0]):
        am = np.float32(0.0)
        for k in range(32):
            v = abs(blocks[b, k])
            if v > am:
                am = v
        amax_out[b] = am


@njit(cache=True, nogil=True)
def _q8_pack_codes(blocks, s32, out):
    for b in range(blocks.shape[0]):
        s = s32[b]
        for t in range(32):
            if s == 0:
                out[b, 2 + t] = np.uint8(0)
                continue
            r = blocks[b, t] / s
            q = np.int32(np.trunc(r + (np.float32(0.5) if r >= 0 else np.float32(-0.5))))
            if q < -127:
                q = -127
            elif q > 127:
                q = 127
            out[b, 2 + t] = np.uint8(np.int8(q))


def _q4_encode_blocks(blocks: np.ndarray) -> np.ndarray:
    """Q4 encoder over (n_blocks, 32) f32 -> packed (n_blocks, 18) uint8."""
    n = blocks.shape[0]
    m = np.empty(n, dtype=np.float32)
    rmax = np.empty(n, dtype=np.float32)
    over = np.empty(n, dtype=np.float32)
    _q4_block_extrema(blocks, m, rmax, over)
    scale = (m / np.float32(-8.0)).astype(np.float16)
    # widen scales whose positive-code end would clamp past half a step,
    # with margin for the f16 rounding of the widened scale itself
    wide = rmax > _Q4_WIDEN_LIMIT
    if np.any(wide):
        widened = (over[wide] / np.float32(_Q4_WIDEN_TARGET)).astype(np.float16)
        scale[wide] = widened
    out = np.empty((n, 18), dtype=np.uint8)
    out[:, :2] = scale.reshape(-1, 1).view(np.uint8)
    _q4_pack_codes(blocks, scale.astype(np.float32), out)
    return out


def _q8_encode_blocks(blocks: np.ndarray) -> np.ndarray:
    """Q8 encoder over (n_blocks, 32) f32 -> packed (n_blocks, 34) uint8."""
    n = blocks.shape[0]
    amax = np.empty(n, dtype=np.float32)
    _q8_block_amax(blocks, amax)
    scale = (amax / np.float32(127.0)).astype(np.float16)
    out = np.empty((n, 34), dtype=np.uint8)
    out[:, :2] = scale.reshape(-1, 1).view(np.uint8)
    _q8_pack_codes(blocks, scale.astype(np.float32), out)
    return out


def quantize_rows(values: np.ndarray, dtype: DType) -> np.ndarray:
    """Encode a 2-D f32 array row by row into the packed uint8 layout."""
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ShapeError("quantize_rows expects a 2-D array")
    rows, d = values.shape
    if d % QBLOCK != 0:
        raise ShapeError(f"row length {d} is not a multiple of {QBLOCK}")
    blocks = values.reshape(rows * d // QBLOCK, QBLOCK)
    if dtype == DType.Q4_0:
        out = _q4_encode_blocks(blocks)
    elif dtype == DType.Q8_0:
        out = _q8_encode_blocks(blocks)
    else:
        raise ShapeError(f"quantize_rows does not handle {dtype}")
    return out.reshape(rows, -1)


def dequantize_rows(buf: np.ndarray, dtype: DType, d: int) -> np.ndarray:
    """Decode packed rows back to a 2-D f32 array of row length d."""
    if buf.ndim != 2:
        raise ShapeError("dequantize_rows expects a 2-D packed array")
    rows = buf.shape[0]
    nb = d // QBLOCK
    blocks = buf.reshape(rows * nb, dtype.block_bytes)
    scales = blocks[:, :2].copy().view(np.float16).astype(np.float32)
    if dtype == DType.Q4_0:
        packed = blocks[:, 2:]
        codes = np.empty((blocks.shape[0], QBLOCK), dtype=np.int32)
        codes[:, 0::2] = (packed & 0xF).astype(np.int32) - 8
        codes[:, 1::2] = (packed >> 4).astype(np.int32) - 8
    elif dtype == DType.Q8_0:
        codes = blocks[:, 2:].copy().view(np.int8).astype(np.int32)
    else:
        raise ShapeError(f"dequantize_rows does not handle {dtype}")
    vals = codes.astype(np.float32) * scales
    return vals.reshape(rows, d)


def dequantize_tensor(t: Tensor) -> np.ndarray:
    """Full f32 view of any tensor, decoding quantized storage."""
    if t.dtype == DType.F32:
        return t.data
    if t.dtype == DType.F16:
        return t.data.astype(np.float32)
    flat = t.data.reshape(-1, buffer_row_bytes(t))
    rows2d = dequantize_rows(flat, t.dtype, t.shape[-1])
    return rows2d.reshape(t.shape)


def buffer_row_bytes(t: Tensor) -> int:
    return t.shape[-1] // QBLOCK * t.dtype.block_bytes


# ---------------------------------------------------------------------------
# Inner loops (numba, strict IEEE f32, GIL released)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _gemv_f32(W, x, out, r0, r1):
    d = W.shape[1]
    i = r0
    while i + 8 <= r1:
        a0 = np.float32(0.0); a1 = np.float32(0.0); a2 = np.float32(0.0); a3 = np.float32(0.0)
        a4 = np.float32(0.0); a5 = np.float32(0.0); a6 = np.float32(0.0); a7 = np.float32(0.0)
        for k in range(d):
            v = x[k]
            a0 += W[i, k] * v; a1 += W[i + 1, k] * v
            a2 += W[i + 2, k] * v; a3 += W[i + 3, k] * v
            a4 += W[i + 4, k] * v; a5 += W[i + 5, k] * v
            a6 += W[i + 6, k] * v; a7 += W[i + 7, k] * v
        out[i] = a0; out[i + 1] = a1; out[i + 2] = a2; out[i + 3] = a3
        out[i + 4] = a4; out[i + 5] = a5; out[i + 6] = a6; out[i + 7] = a7
        i += 8
    while i < r1:
        acc = np.float32(0.0)
        for k in range(d):
            acc += W[i, k] * x[k]
        out[i] = acc
        i += 1


@njit(cache=True, nogil=True)
def _gemm_f32(W, X, out, r0, r1):
    d = W.shape[1]
    n = X.shape[1]
    acc = np.empty(n, dtype=np.float32)
    for i in range(r0, r1):
        for j in range(n):
            acc[j] = np.float32(0.0)
        for k in range(d):
            w = W[i, k]
            for j in range(n):
                acc[j] += w * X[k, j]
        for j in range(n):
            out[i, j] = acc[j]


@njit(cache=True, nogil=True)
def _widen_f16_rows(Wu16, table, scratch, r0, r1):
    d = Wu16.shape[1]
    for i in range(r0, r1):
        for k in range(d):
            scratch[i - r0, k] = table[Wu16[i, k]]


@njit(cache=True, nogil=True)
def _gemv_q4(Wq, x, out, f16_table, nib_pair, d, r0, r1):
    nblk = d // 32
    i = r0
    while i + 4 <= r1:
        a0 = np.float32(0.0); a1 = np.float32(0.0); a2 = np.float32(0.0); a3 = np.float32(0.0)
        for b in range(nblk):
            off = b * 18
            s0 = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            s1 = f16_table[np.uint16(Wq[i + 1, off]) | (np.uint16(Wq[i + 1, off + 1]) << 8)]
            s2 = f16_table[np.uint16(Wq[i + 2, off]) | (np.uint16(Wq[i + 2, off + 1]) << 8)]
            s3 = f16_table[np.uint16(Wq[i + 3, off]) | (np.uint16(Wq[i + 3, off + 1]) << 8)]
            base = b * 32
            for t in range(16):
                x0 = x[base + 2 * t]
                x1 = x[base + 2 * t + 1]
                b0 = Wq[i, off + 2 + t]; b1 = Wq[i + 1, off + 2 + t]
                b2 = Wq[i + 2, off + 2 + t]; b3 = Wq[i + 3, off + 2 + t]
                a0 += (nib_pair[b0, 0] * s0) * x0; a0 += (nib_pair[b0, 1] * s0) * x1
                a1 += (nib_pair[b1, 0] * s1) * x0; a1 += (nib_pair[b1, 1] * s1) * x1
                a2 += (nib_pair[b2, 0] * s2) * x0; a2 += (nib_pair[b2, 1] * s2) * x1
                a3 += (nib_pair[b3, 0] * s3) * x0; a3 += (nib_pair[b3, 1] * s3) * x1
        out[i] = a0; out[i + 1] = a1; out[i + 2] = a2; out[i + 3] = a3
        i += 4
    while i < r1:
        acc = np.float32(0.0)
        for b in range(nblk):
            off = b * 18
            s = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            base = b * 32
            for t in range(16):
                byte = Wq[i, off + 2 + t]
                acc += (nib_pair[byte, 0] * s) * x[base + 2 * t]
                acc += (nib_pair[byte, 1] * s) * x[base + 2 * t + 1]
        out[i] = acc
        i += 1


@njit(cache=True, nogil=True)
def _gemm_q4(Wq, X, out, f16_table, nib_pair, d, r0, r1):
    nblk = d // 32
    n = X.shape[1]
    acc = np.empty(n, dtype=np.float32)
    for i in range(r0, r1):
        for j in range(n):
            acc[j] = np.float32(0.0)
        for b in range(nblk):
            off = b * 18
            s = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            base = b * 32
            for t in range(16):
                byte = Wq[i, off + 2 + t]
                w0 = nib_pair[byte, 0] * s
                w1 = nib_pair[byte, 1] * s
                for j in range(n):
                    acc[j] += w0 * X[base + 2 * t, j]
                    acc[j] += w1 * X[base + 2 * t + 1, j]
        for j in range(n):
            out[i, j] = acc[j]


@njit(cache=True, nogil=True)
def _gemv_q8(Wq, x, out, f16_table, i8_table, d, r0, r1):
    nblk = d // 32
    i = r0
    while i + 4 <= r1:
        a0 = np.float32(0.0); a1 = np.float32(0.0); a2 = np.float32(0.0); a3 = np.float32(0.0)
        for b in range(nblk):
            off = b * 34
            s0 = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            s1 = f16_table[np.uint16(Wq[i + 1, off]) | (np.uint16(Wq[i + 1, off + 1]) << 8)]
            s2 = f16_table[np.uint16(Wq[i + 2, off]) | (np.uint16(Wq[i + 2, off + 1]) << 8)]
            s3 = f16_table[np.uint16(Wq[i + 3, off]) | (np.uint16(Wq[i + 3, off + 1]) << 8)]
            base = b * 32
            for t in range(32):
                xv = x[base + t]
                a0 += (i8_table[Wq[i, off + 2 + t]] * s0) * xv
                a1 += (i8_table[Wq[i + 1, off + 2 + t]] * s1) * xv
                a2 += (i8_table[Wq[i + 2, off + 2 + t]] * s2) * xv
                a3 += (i8_table[Wq[i + 3, off + 2 + t]] * s3) * xv
        out[i] = a0; out[i + 1] = a1; out[i + 2] = a2; out[i + 3] = a3
        i += 4
    while i < r1:
        acc = np.float32(0.0)
        for b in range(nblk):
            off = b * 34
            s = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            base = b * 32
            for t in range(32):
                acc += (i8_table[Wq[i, off + 2 + t]] * s) * x[base + t]
        out[i] = acc
        i += 1


@njit(cache=True, nogil=True)
def _gemm_q8(Wq, X, out, f16_table, i8_table, d, r0, r1):
    nblk = d // 32
    n = X.shape[1]
    acc = np.empty(n, dtype=np.float32)
    for i in range(r0, r1):
        for j in range(n):
            acc[j] = np.float32(0.0)
        for b in range(nblk):
            off = b * 34
            s = f16_table[np.uint16(Wq[i, off]) | (np.uint16(Wq[i, off + 1]) << 8)]
            base = b * 32
            for t in range(32):
                w = i8_table[Wq[i, off + 2 + t]] * s
                for j in range(n):
                    acc[j] += w * X[base + t, j]
        for j in range(n):
            out[i, j] = acc[j]


@njit(cache=True, nogil=True)
def _rmsnorm_cols(x, weight, eps, out):
    d, n = x.shape
    for j in range(n):
        ss = np.float32(0.0)
        for i in range(d):
            v = x[i, j]
            ss += v * v
        denom = np.sqrt(ss / np.float32(d) + eps)
        for i in range(d):
            out[i, j] = weight[i] * x[i, j] / denom


@njit(cache=True, nogil=True)
def _rope_cols(x3, positions, theta, out3):
    heads, head_dim, n = x3.shape
    half = head_dim // 2
    for j in range(n):
        pos = np.float64(positions[j])
        for i in range(half):
            freq = theta ** (np.float64(-2.0 * i) / np.float64(head_dim))
            angle = pos * freq
            c = np.float32(np.cos(angle))
            s = np.float32(np.sin(angle))
            for h in range(heads):
                v0 = x3[h, 2 * i, j]
                v1 = x3[h, 2 * i + 1, j]
                out3[h, 2 * i, j] = v0 * c - v1 * s
                out3[h, 2 * i + 1, j] = v0 * s + v1 * c


@njit(cache=True, nogil=True)
def _softmax_causal_rows(scores, n_past, out):
    n_q, n_kv = scores.shape
    for q in range(n_q):
        allowed = n_past + q + 1
        m = scores[q, 0]
        for p in range(1, allowed):
            if scores[q, p] > m:
                m = scores[q, p]
        ssum = np.float32(0.0)
        for p in range(allowed):
            e = np.exp(scores[q, p] - m)
            out[q, p] = e
            ssum += e
        for p in range(allowed):
            out[q, p] = out[q, p] / ssum
        for p in range(allowed, n_kv):
            out[q, p] = np.float32(0.0)


@njit(cache=True, nogil=True)
def _add_flat(a, b, out):
    for i in range(a.shape[0]):
        out[i] = a[i] + b[i]


@njit(cache=True, nogil=True)
def _mul_flat(a, b, out):
    for i in range(a.shape[0]):
        out[i] = a[i] * b[i]


@njit(cache=True, nogil=True)
def _silu_flat(a, out):
    for i in range(a.shape[0]):
        v = a[i]
        out[i] = v * (np.float32(1.0) / (np.float32(1.0) + np.exp(-v)))


@njit(cache=True, nogil=True)
def _scale_flat(a, factor, out):
    for i in range(a.shape[0]):
        out[i] = a[i] * factor


@njit(cache=True, nogil=True)
def _attn_scores(kcache, kcur, q, out, head_dim, group, h0, h1):
    # out[h, t, p] = sum_d K[p, kv_slice d] * q[head slice d, t], ascending d
    n_past = kcache.shape[0]
    n = q.shape[1]
    n_kv = out.shape[2]
    for h in range(h0, h1):
        koff = (h // group) * head_dim
        qoff = h * head_dim
        for t in range(n):
            for p in range(n_past):
                acc = np.float32(0.0)
                for d in range(head_dim):
                    acc += kcache[p, koff + d] * q[qoff + d, t]
                out[h, t, p] = acc
            for p in range(n_past, n_kv):
                acc = np.float32(0.0)
                for d in range(head_dim):
                    acc += kcur[koff + d, p - n_past] * q[qoff + d, t]
                out[h, t, p] = acc


@njit(cache=True, nogil=True)
def _attn_mix(vcache, vcur, probs, out, head_dim, group, h0, h1):
    # out[h*head_dim + d, t] = sum_p probs[h, t, p] * V[p, kv_slice d], ascending p
    n_past = vcache.shape[0]
    n = probs.shape[1]
    n_kv = probs.shape[2]
    for h in range(h0, h1):
        voff = (h // group) * head_dim
        for t in range(n):
            for d in range(head_dim):
                acc = np.float32(0.0)
                for p in range(n_past):
                    acc += probs[h, t, p] * vcache[p, voff + d]
                for p in range(n_past, n_kv):
                    acc += probs[h, t, p] * vcur[voff + d, p - n_past]
                out[h * head_dim + d, t] = acc


# ---------------------------------------------------------------------------
# Public kernels
# ---------------------------------------------------------------------------


def matmul_into(w: Tensor | np.ndarray, x: np.ndarray, out: np.ndarray, r0: int, r1: int) -> None:
    """Compute out[r0:r1, :] = (W @ X)[r0:r1, :] for any weight dtype.

    Row ranges never change numerics: each output element is a complete
    ascending-k chain regardless of chunking.
    """
    if isinstance(w, np.ndarray):
        w = Tensor("w", w.shape, DType.F32, np.ascontiguousarray(w, dtype=np.float32))
    n = x.shape[1]
    if w.dtype == DType.F32:
        if n == 1:
            _gemv_f32(w.data, x[:, 0], out[:, 0], r0, r1)
        else:
            _gemm_f32(w.data, x, out, r0, r1)
    elif w.dtype == DType.F16:
        wu16 = w.data.view(np.uint16)
        d = w.shape[1]
        scratch = np.empty((min(_F16_CHUNK_ROWS, r1 - r0), d), dtype=np.float32)
        for c0 in range(r0, r1, _F16_CHUNK_ROWS):
            c1 = min(c0 + _F16_CHUNK_ROWS, r1)
            _widen_f16_rows(wu16, F16_TABLE, scratch, c0, c1)
            if n == 1:
                _gemv_f32(scratch[: c1 - c0], x[:, 0], out[c0:c1, 0], 0, c1 - c0)
            else:
                _gemm_f32(scratch[: c1 - c0], x, out[c0:c1], 0, c1 - c0)
    elif w.dtype == DType.Q4_0:
        if n == 1:
            _gemv_q4(w.data, x[:, 0], out[:, 0], F16_TABLE, NIB_PAIR, w.shape[1], r0, r1)
        else:
            _gemm_q4(w.data, x, out, F16_TABLE, NIB_PAIR, w.shape[1], r0, r1)
    elif w.dtype == DType.Q8_0:
        if n == 1:
            _gemv_q8(w.data, x[:, 0], out[:, 0], F16_TABLE, I8_TABLE, w.shape[1], r0, r1)
        else:
            _gemm_q8(w.data, x, out, F16_TABLE, I8_TABLE, w.shape[1], r0, r1)
    else:  # pragma: no cover
        raise ShapeError(f"matmul does not handle dtype {w.dtype}")


def matmul(w: Tensor | np.ndarray, x: np.ndarray) -> np.ndarray:
    """W[r_out, d_in] @ X[d_in, n_cols] -> f32[r_out, n_cols].

    Quantized rows are dequantized block-by-block and accumulated in f32,
    bit-identical to dequantizing W fully and running the f32 path.
    """
    shape = w.shape if isinstance(w, Tensor) else np.asarray(w).shape
    if len(shape) != 2:
        raise ShapeError(f"matmul weight must be 2-D, got {shape}")
    x = np.asarray(x, dtype=np.float32)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] != shape[1]:
        raise ShapeError(
            f"matmul inner extents differ: W is {tuple(shape)}, X is {tuple(x.shape)}"
        )
    x = np.ascontiguousarray(x)
    out = np.empty((shape[0], x.shape[1]), dtype=np.float32)
    matmul_into(w, x, out, 0, shape[0])
    return out[:, 0] if squeeze else out


def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """out[i] = weight[i] * x[i] / sqrt(mean(x^2) + eps)."""
    x = np.asarray(x, dtype=np.float32)
    weight = np.asarray(weight, dtype=np.float32)
    one_d = x.ndim == 1
    x2 = x.reshape(-1, 1) if one_d else x
    if weight.shape != (x2.shape[0],):
        raise ShapeError(
            f"rmsnorm weight length {weight.shape} does not match x rows {x2.shape[0]}"
        )
    out = np.empty_like(x2)
    _rmsnorm_cols(np.ascontiguousarray(x2), weight, np.float32(eps), out)
    return out[:, 0] if one_d else out


def rope(x: np.ndarray, positions: np.ndarray, theta_base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive feature pairs of x[heads, head_dim, n_tok] by
    position-dependent angles: angle = p * theta_base^(-2i/head_dim)."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"rope expects [heads, head_dim, n_tok], got {x.shape}")
    heads, head_dim, n = x.shape
    if head_dim % 2 != 0:
        raise ShapeError(f"rope head_dim must be even, got {head_dim}")
    positions = np.asarray(positions, dtype=np.int64)
    if positions.shape != (n,):
        raise ShapeError(f"rope needs one position per token, got {positions.shape}")
    out = np.empty_like(x)
    _rope_cols(x, positions, np.float64(theta_base), out)
    return out


def softmax_causal(scores: np.ndarray, n_past: int) -> np.ndarray:
    """Max-subtracted softmax per row over columns 0..(n_past + q); the
    masked tail of each row is exactly zero."""
    scores = np.ascontiguousarray(scores, dtype=np.float32)
    if scores.ndim != 2:
        raise ShapeError(f"softmax_causal expects [n_q, n_kv], got {scores.shape}")
    n_q, n_kv = scores.shape
    if n_kv != n_past + n_q:
        raise ShapeError(f"n_kv ({n_kv}) must equal n_past ({n_past}) + n_q ({n_q})")
    out = np.empty_like(scores)
    _softmax_causal_rows(scores, n_past, out)
    return out


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = np.empty_like(a)
    _add_flat(a.reshape(-1), b.reshape(-1), out.reshape(-1))
    return out


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = np.empty_like(a)
    _mul_flat(a.reshape(-1), b.reshape(-1), out.reshape(-1))
    return out


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), elementwise."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    out = np.empty_like(x)
    _silu_flat(x.reshape(-1), out.reshape(-1))
    return out


def scale(x: np.ndarray, factor: float) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    out = np.empty_like(x)
    _scale_flat(x.reshape(-1), np.float32(factor), out.reshape(-1))
    return out


def embed_lookup(table: Tensor, ids: np.ndarray) -> np.ndarray:
    """Gather rows of the embedding table, dequantizing if needed. Returns
    f32[n, d_model]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embed_lookup ids must be 1-D, got {ids.shape}")
    vocab, d_model = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)][0])
        raise IndexError(f"token id {bad} out of range for vocab {vocab}")
    if table.dtype == DType.F32:
        return table.data[ids].copy()
    if table.dtype == DType.F16:
        return table.data[ids].astype(np.float32)
    return dequantize_rows(table.data[ids], table.dtype, d_model)
