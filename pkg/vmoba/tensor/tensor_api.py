import logging
from pathlib import Path
from typing import Union

import numpy as np

from vmoba.errors import EmptyInputError, ShapeMismatchError
from .value_objects import DType, Tensor

logger = logging.getLogger(__name__)

ArrayLike = Union[Tensor, np.ndarray]

# Float slack when comparing a running cumulative sum against a target mass.
CUMULATIVE_TOLERANCE = 1e-12


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value)
    dtype = DType.F64 if array.dtype == np.float64 else DType.F32
    return Tensor.of(array, dtype)


def _result_dtype(a: Tensor, b: Tensor) -> DType:
    return DType.F64 if DType.F64 in (a.dtype, b.dtype) else DType.F32


# ==========================================
# OPERATIONS
# ==========================================

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """c[i, j] = sum_p a[i, p] * b[p, j]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape, detail="expected [m x k] @ [k x n]")
    dtype = _result_dtype(a, b).numpy
    out = np.matmul(a.data.astype(dtype, copy=False), b.data.astype(dtype, copy=False))
    return Tensor(out.shape, out)


def softmax(logits: np.ndarray, axis: int = -1, scale: float = 1.0) -> np.ndarray:
    """Numerically stable softmax along `axis`; entries equal to -inf get zero weight."""
    z = np.asarray(logits) * scale
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def stable_softmax(v: ArrayLike, scale: float = 1.0) -> Tensor:
    t = _as_tensor(v)
    if t.ndim != 1:
        raise ShapeMismatchError("stable_softmax", t.shape, detail="expected a vector")
    if t.size == 0:
        raise EmptyInputError("stable_softmax needs at least one element")
    out = softmax(t.data, scale=scale).astype(t.dtype.numpy, copy=False)
    return Tensor(out.shape, out)


def prefix_count(cumulative: np.ndarray, target: float) -> Union[int, np.ndarray]:
    """Length of the shortest prefix whose cumulative value reaches `target` (along the last axis)."""
    cumulative = np.asarray(cumulative)
    n = cumulative.shape[-1]
    if target >= 1.0:
        counts = np.full(cumulative.shape[:-1], n, dtype=np.int64)
    else:
        counts = np.sum(cumulative < target - CUMULATIVE_TOLERANCE, axis=-1) + 1
        counts = np.minimum(counts, n)
    if np.ndim(counts) == 0:
        return int(counts)
    return counts


def write_tensor(path: Union[str, Path], t: ArrayLike) -> None:
    from vmoba.storage import TensorStorage

    TensorStorage.save(path, _as_tensor(t))


def read_tensor(path: Union[str, Path]) -> Tensor:
    from vmoba.storage import TensorStorage

    return TensorStorage.load(path)
