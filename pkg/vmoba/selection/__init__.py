from .value_objects import Rule, Scope, SelectionPolicy, SimilarityMatrix
from .aggregate_root import SelectionMask
from .selection_api import (
    select,
    select_global_threshold,
    select_global_topk,
    select_local_threshold,
    select_local_topk,
    similarity,
)

__all__ = [
    "Rule",
    "Scope",
    "SelectionPolicy",
    "SimilarityMatrix",
    "SelectionMask",
    "select",
    "select_global_threshold",
    "select_global_topk",
    "select_local_threshold",
    "select_local_topk",
    "similarity",
]
