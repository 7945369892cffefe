import numpy as np
import pytest

from wavellm.model import ModelConfig, gen_synthetic_weights, preset_config
from wavellm.tensor import DType

# Small 2-layer config: same structure as the presets, fast enough for
# per-test engine construction.
TINY = ModelConfig(
    n_layers=2, d_model=64, n_heads=4, n_kv_heads=2, d_ff=128, vocab=96, ctx_len=32,
    dtype=DType.F32,
)


@pytest.fixture(scope="session")
def tiny_weights():
    return gen_synthetic_weights(TINY, seed=7)


@pytest.fixture(scope="session")
def toy_config():
    return preset_config("toy", DType.F16)


@pytest.fixture(scope="session")
def toy_weights(toy_config):
    return gen_synthetic_weights(toy_config, seed=42)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
