from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np


class DType(Enum):
    F32 = 0
    F64 = 1

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.F32 else np.dtype(np.float64)

    @staticmethod
    def of(array: np.ndarray) -> "DType":
        if array.dtype == np.float32:
            return DType.F32
        if array.dtype == np.float64:
            return DType.F64
        raise ValueError(f"Unsupported dtype {array.dtype}; expected float32 or float64")


@dataclass(frozen=True)
class Tensor:
    """Immutable row-major array of f32 (default) or f64 scalars."""

    shape: Tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if any(n < 0 for n in shape):
            raise ValueError(f"Extents must be non-negative, got {shape}")
        if int(np.prod(shape, dtype=np.int64)) != self.data.size:
            raise ValueError(f"Shape {shape} does not match data length {self.data.size}")
        DType.of(self.data)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Tensor data must be finite")

        data = self.data.reshape(shape)
        # a read-only view can still alias a writable buffer
        if data.flags.writeable or data.base is not None:
            data = data.copy()
            data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    @property
    def dtype(self) -> DType:
        return DType.of(self.data)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the payload."""
        return np.array(self.data)

    def astype(self, dtype: DType) -> "Tensor":
        return Tensor.of(self.data, dtype)

    # ------------------------------------------------------------------
    # factories
    # ------------------------------------------------------------------

    @staticmethod
    def of(values: Union[np.ndarray, Sequence, float], dtype: DType = DType.F32) -> "Tensor":
        array = np.asarray(values, dtype=dtype.numpy)
        return Tensor(array.shape, array)

    @staticmethod
    def zeros(shape: Sequence[int], dtype: DType = DType.F32) -> "Tensor":
        return Tensor(tuple(shape), np.zeros(tuple(shape), dtype=dtype.numpy))

    @staticmethod
    def eye(n: int, dtype: DType = DType.F32) -> "Tensor":
        return Tensor((n, n), np.eye(n, dtype=dtype.numpy))

    @staticmethod
    def random(shape: Sequence[int], seed: int, dtype: DType = DType.F32) -> "Tensor":
        rng = np.random.default_rng(seed)
        return Tensor(tuple(shape), rng.standard_normal(tuple(shape)).astype(dtype.numpy))
