from .value_objects import AttentionGrads, AttentionIO, HeadResult, LayerResult
from .attention_api import (
    dense_attention,
    dense_backward,
    masked_dense_attention,
    sparse_backward,
    sparse_forward_gather,
    sparse_forward_streamed,
)
from .aggregate_root import PATHS, VMoBAAttention

__all__ = [
    "AttentionGrads",
    "AttentionIO",
    "HeadResult",
    "LayerResult",
    "PATHS",
    "VMoBAAttention",
    "dense_attention",
    "dense_backward",
    "masked_dense_attention",
    "sparse_backward",
    "sparse_forward_gather",
    "sparse_forward_streamed",
]
