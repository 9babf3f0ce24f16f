from .value_objects import ConcentrationReport, FlopsReport
from .metrics_api import (
    DEFAULT_CUTOFFS,
    block_attention_map,
    closed_form_flops,
    concentration_curve,
    flops_estimate,
    head_entropy,
    query_importance,
    token_sparsity,
)

__all__ = [
    "ConcentrationReport",
    "FlopsReport",
    "DEFAULT_CUTOFFS",
    "block_attention_map",
    "closed_form_flops",
    "concentration_curve",
    "flops_estimate",
    "head_entropy",
    "query_importance",
    "token_sparsity",
]
