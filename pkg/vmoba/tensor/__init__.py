from .value_objects import DType, Tensor
from .tensor_api import (
    matmul,
    stable_softmax,
    softmax,
    prefix_count,
    write_tensor,
    read_tensor,
)

__all__ = [
    "DType",
    "Tensor",
    "matmul",
    "stable_softmax",
    "softmax",
    "prefix_count",
    "write_tensor",
    "read_tensor",
]
