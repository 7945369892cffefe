"""Model builder: graph structure, synthetic weights, file format."""

import numpy as np
import pytest

from wavellm.errors import BadMagicError, ShapeError, TruncatedFileError, VersionError
from wavellm.graph import OpKind
from wavellm.model import (
    ModelConfig,
    WEIGHT_MATMUL_TAGS,
    build_llama,
    gen_synthetic_weights,
    load_model,
    preset_config,
    save_model,
)
from wavellm.tensor import DType

# Construction sequence per layer (19 nodes): norm, Q/K/V matmuls, two
# ropes, kq, scale, softmax, kqv, out-projection, residual add, ffn norm,
# gate, up, silu, gating mul, down, residual add. Plus embed lookup,
# final norm, and the output matmul.
NODES_PER_LAYER = 19
EXTRA_NODES = 3


def test_node_count_follows_construction_sequence():
    for n_layers in (1, 2, 4):
        cfg = ModelConfig(
            n_layers=n_layers, d_model=64, n_heads=4, n_kv_heads=2,
            d_ff=128, vocab=96, ctx_len=32,
        )
        g = build_llama(cfg)
        assert len(g) == NODES_PER_LAYER * n_layers + EXTRA_NODES


def test_per_layer_op_sequence():
    cfg = ModelConfig(n_layers=1, d_model=64, n_heads=4, n_kv_heads=2,
                      d_ff=128, vocab=96, ctx_len=32)
    g = build_llama(cfg)
    kinds = [n.op for n in g.nodes]
    assert kinds == [
        OpKind.EmbedLookup,
        OpKind.RmsNorm, OpKind.MulMat, OpKind.MulMat, OpKind.MulMat,
        OpKind.Rope, OpKind.Rope,
        OpKind.MulMat, OpKind.Scale, OpKind.SoftmaxCausal, OpKind.MulMat,
        OpKind.MulMat, OpKind.EltAdd,
        OpKind.RmsNorm, OpKind.MulMat, OpKind.MulMat,
        OpKind.Silu, OpKind.EltMul, OpKind.MulMat, OpKind.EltAdd,
        OpKind.RmsNorm, OpKind.MulMat,
    ]


def test_seven_weight_matmuls_per_layer():
    g = build_llama(preset_config("toy"))
    for layer in range(4):
        tags = sorted(
            n.tag for n in g.nodes if n.layer == layer and n.is_weight_matmul
        )
        assert tags == sorted(WEIGHT_MATMUL_TAGS)


def test_nine_matmuls_per_layer():
    g = build_llama(preset_config("toy"))
    for layer in range(4):
        muls = [n for n in g.nodes if n.layer == layer and n.op == OpKind.MulMat]
        assert len(muls) == 9
        flags = {n.tag: n.is_weight_matmul for n in muls}
        assert flags["kq"] is False and flags["kqv"] is False


def test_gqa_shape_law():
    for name in ("toy", "1b-proportioned"):
        cfg = preset_config(name)
        ws = None
        shapes_k = cfg.d_model * cfg.n_kv_heads // cfg.n_heads
        weights = gen_synthetic_weights(cfg, 0) if name == "toy" else None
        if weights:
            for lw in weights.layers:
                assert lw.wk.shape == (shapes_k, cfg.d_model)
                assert lw.wv.shape == (shapes_k, cfg.d_model)
        assert cfg.kv_dim == shapes_k


def test_config_invariants_enforced():
    with pytest.raises(ShapeError):
        ModelConfig(n_layers=1, d_model=65, n_heads=4, n_kv_heads=2,
                    d_ff=128, vocab=8, ctx_len=4)
    with pytest.raises(ShapeError):
        ModelConfig(n_layers=1, d_model=64, n_heads=4, n_kv_heads=3,
                    d_ff=128, vocab=8, ctx_len=4)
    with pytest.raises(ShapeError):
        ModelConfig(n_layers=1, d_model=64, n_heads=4, n_kv_heads=2,
                    d_ff=64, vocab=8, ctx_len=4)


# ---------------------------------------------------------------------------
# synthetic weights
# ---------------------------------------------------------------------------


def test_same_seed_bitwise_identical():
    cfg = preset_config("toy", DType.Q8_0)
    a = gen_synthetic_weights(cfg, 123)
    b = gen_synthetic_weights(cfg, 123)
    for (name_a, ta), (name_b, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert name_a == name_b
        assert np.array_equal(ta.data.view(np.uint8), tb.data.view(np.uint8))


def test_different_seeds_differ():
    cfg = preset_config("toy")
    a = gen_synthetic_weights(cfg, 1)
    b = gen_synthetic_weights(cfg, 2)
    assert any(
        not np.array_equal(ta.data.view(np.uint8), tb.data.view(np.uint8))
        for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors())
    )


def test_q4_rejects_non_block_multiple():
    cfg = ModelConfig(n_layers=1, d_model=48, n_heads=4, n_kv_heads=2,
                      d_ff=96, vocab=64, ctx_len=8, dtype=DType.Q4_0)
    with pytest.raises(ShapeError):
        gen_synthetic_weights(cfg, 0)


def test_build_llama_validates_weight_shapes():
    cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, n_kv_heads=2,
                      d_ff=128, vocab=96, ctx_len=32)
    other = ModelConfig(n_layers=2, d_model=64, n_heads=4, n_kv_heads=4,
                        d_ff=128, vocab=96, ctx_len=32)
    weights = gen_synthetic_weights(other, 0)
    with pytest.raises(ShapeError):
        build_llama(cfg, weights)


# ---------------------------------------------------------------------------
# model file format
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dtype", [DType.F32, DType.F16, DType.Q8_0, DType.Q4_0])
def test_save_load_roundtrip(tmp_path, dtype):
    cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, n_kv_heads=2,
                      d_ff=128, vocab=96, ctx_len=32, dtype=dtype)
    weights = gen_synthetic_weights(cfg, 5)
    path = tmp_path / "model.wavellm"
    save_model(str(path), cfg, weights)
    cfg2, weights2 = load_model(str(path))
    assert cfg2 == cfg
    for (name_a, ta), (name_b, tb) in zip(weights.named_tensors(), weights2.named_tensors()):
        assert name_a == name_b
        assert ta.dtype == tb.dtype and ta.shape == tb.shape
        assert np.array_equal(ta.data.view(np.uint8), tb.data.view(np.uint8))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(BadMagicError, match="bad magic"):
        load_model(str(path))


def test_version_mismatch(tmp_path):
    cfg = ModelConfig(n_layers=1, d_model=64, n_heads=4, n_kv_heads=2,
                      d_ff=128, vocab=96, ctx_len=32, dtype=DType.F32)
    path = tmp_path / "m.bin"
    save_model(str(path), cfg, gen_synthetic_weights(cfg, 0))
    raw = bytearray(path.read_bytes())
    raw[8:12] = (99).to_bytes(4, "little")
    path.write_bytes(raw)
    with pytest.raises(VersionError):
        load_model(str(path))


def test_truncation_names_tensor(tmp_path):
    cfg = ModelConfig(n_layers=1, d_model=64, n_heads=4, n_kv_heads=2,
                      d_ff=128, vocab=96, ctx_len=32, dtype=DType.F32)
    path = tmp_path / "m.bin"
    save_model(str(path), cfg, gen_synthetic_weights(cfg, 0))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 257])
    with pytest.raises(TruncatedFileError, match="w_output"):
        load_model(str(path))
