"""Tensors and storage dtypes.

A Tensor is a shaped, row-major numeric buffer. F32/F16 tensors keep their
natural numpy dtype; quantized tensors (Q8_0 / Q4_0) pack the innermost axis
into 32-element blocks, each encoded as a float16 scale followed by the
codes. Effective storage is 8.5 bits/weight for Q8_0 (34 bytes per block)
and 4.5 bits/weight for Q4_0 (18 bytes per block).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import prod

import numpy as np

from .errors import ShapeError

QBLOCK = 32  # elements per quantization block

MAX_RANK = 4


class DType(str, Enum):
    F32 = "f32"
    F16 = "f16"
    Q8_0 = "q8_0"
    Q4_0 = "q4_0"

    @property
    def is_quantized(self) -> bool:
        return self in (DType.Q8_0, DType.Q4_0)

    @property
    def block_size(self) -> int:
        return QBLOCK if self.is_quantized else 1

    @property
    def block_bytes(self) -> int:
        return _BLOCK_BYTES[self]


_BLOCK_BYTES = {
    DType.F32: 4,
    DType.F16: 2,
    DType.Q8_0: 34,  # 2B f16 scale + 32 int8 codes
    DType.Q4_0: 18,  # 2B f16 scale + 16B packed nibbles
}


def buffer_nbytes(shape: tuple[int, ...], dtype: DType) -> int:
    """Exact encoded byte count for a tensor of this shape and dtype."""
    n = prod(shape)
    if dtype.is_quantized:
        if shape and shape[-1] % QBLOCK != 0:
            raise ShapeError(
                f"quantized innermost extent {shape[-1]} is not a multiple of {QBLOCK}"
            )
        return n // QBLOCK * dtype.block_bytes
    return n * dtype.block_bytes


@dataclass
class Tensor:
    """Shaped, typed, contiguous row-major buffer.

    For F32/F16 `data` is a numpy array of the tensor shape. For quantized
    dtypes `data` is a uint8 array of shape (*outer_dims, row_bytes) holding
    the per-row block streams in element order.
    """

    name: str
    shape: tuple[int, ...]
    dtype: DType
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.shape = tuple(int(d) for d in self.shape)
        if not self.shape or len(self.shape) > MAX_RANK:
            raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got shape {self.shape}")
        if any(d <= 0 for d in self.shape):
            raise ShapeError(f"tensor extents must be positive, got {self.shape}")
        expected = buffer_nbytes(self.shape, self.dtype)
        if self.data.nbytes != expected:
            raise ShapeError(
                f"tensor {self.name!r}: buffer holds {self.data.nbytes} bytes, "
                f"expected {expected} for shape {self.shape} {self.dtype.value}"
            )
        if not self.data.flags.c_contiguous:
            self.data = np.ascontiguousarray(self.data)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    @property
    def n_elements(self) -> int:
        return prod(self.shape)
