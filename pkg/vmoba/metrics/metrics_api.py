import logging
import math
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from vmoba.errors import ShapeMismatchError
from vmoba.partition.aggregate_root import BlockLayout
from vmoba.partition.value_objects import LatentGeometry
from vmoba.selection.aggregate_root import SelectionMask
from vmoba.selection.value_objects import SimilarityMatrix
from vmoba.tensor.tensor_api import prefix_count, softmax
from .value_objects import ConcentrationReport, FlopsReport

logger = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (0.3, 0.5)

Masks = Union[SelectionMask, Sequence[SelectionMask]]


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _check_fraction(name: str, value: float) -> None:
    if not (0.0 < value <= 1.0):
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


def _top_count(fraction: float, n: int) -> int:
    # round first: 0.3 * 10 is 3.0000000000000004 in binary
    return min(n, max(1, math.ceil(round(fraction * n, 9))))


def _scores(S: Union[SimilarityMatrix, np.ndarray]) -> np.ndarray:
    scores = S.scores if isinstance(S, SimilarityMatrix) else np.asarray(S)
    return scores.astype(np.float64)


def _as_mask_list(masks: Masks) -> list:
    if isinstance(masks, SelectionMask):
        return [masks]
    return list(masks)


def _entropy(probs: np.ndarray) -> float:
    """Shannon entropy of a probability vector divided by log(n), in [0, 1]."""
    n = probs.size
    if n <= 1:
        return 0.0
    nz = probs[probs > 0]
    return float(-(nz * np.log(nz)).sum() / math.log(n))


# ==========================================
# FLOPS AND SPARSITY
# ==========================================

def flops_estimate(geom: LatentGeometry, layout: BlockLayout, masks: Masks) -> FlopsReport:
    """FLOPs of the similarity and attention products of one layer.

    A single mask is taken as shared by every head; a sequence gives one mask
    per head and each head works on hidden / heads channels.
    """
    mask_list = _as_mask_list(masks)
    if not mask_list:
        raise ValueError("flops_estimate needs at least one mask")
    if len(mask_list) > 1 and len(mask_list) != geom.heads:
        raise ShapeMismatchError("flops_estimate", (len(mask_list),), (geom.heads,), detail="one mask per head")
    s, d = layout.seq_len, geom.hidden
    if s != geom.seq_len:
        raise ShapeMismatchError("flops_estimate", (s,), (geom.seq_len,), detail="layout does not cover geometry")
    for mask in mask_list:
        if mask.shape != (s, layout.num_blocks):
            raise ShapeMismatchError("flops_estimate", mask.shape, (s, layout.num_blocks))

    selection = 2 * s * layout.num_blocks * d
    if len(mask_list) == 1:
        attention = 4 * d * int(mask_list[0].attended_tokens(layout).sum())
    else:
        head_dim = geom.head_dim
        attention = sum(4 * head_dim * int(mask.attended_tokens(layout).sum()) for mask in mask_list)
    k_avg = float(np.mean([mask.k_avg for mask in mask_list]))
    return FlopsReport(
        selection_flops=selection,
        attention_flops=attention,
        dense_flops=4 * s * s * d,
        k_avg=k_avg,
    )


def closed_form_flops(s: int, d: int, block_len: int, k_avg: float) -> float:
    """s*d*(2*s/s_b + 4*k_avg*s_b), the uniform-block form of flops_estimate."""
    return s * d * (2 * s / block_len + 4 * k_avg * block_len)


def token_sparsity(mask: SelectionMask, layout: BlockLayout, s: Optional[int] = None) -> float:
    """Attended (query, key-token) pairs over s^2."""
    s = layout.seq_len if s is None else s
    if mask.shape != (s, layout.num_blocks):
        raise ShapeMismatchError("token_sparsity", mask.shape, (s, layout.num_blocks))
    return float(mask.attended_tokens(layout).sum()) / float(s * s)


# ==========================================
# ATTENTION ANALYSIS
# ==========================================

def query_importance(rows: np.ndarray, p: float = 0.25, normalized: bool = False) -> np.ndarray:
    """Per query, the summed top ceil(p*n) entries of its normalized row.

    Raw similarity rows are softmax-normalized first; pass normalized=True for
    rows that already are attention probabilities.
    """
    _check_fraction("p", p)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise ShapeMismatchError("query_importance", rows.shape, detail="expected a non-empty [queries x n] matrix")
    probs = rows if normalized else softmax(rows, axis=1)
    top = _top_count(p, rows.shape[1])
    ordered = -np.sort(-probs, axis=1)
    return ordered[:, :top].sum(axis=1)


def head_entropy(S: Union[SimilarityMatrix, np.ndarray]) -> float:
    return _entropy(softmax(_scores(S).reshape(-1)))


def concentration_curve(
    S: Union[SimilarityMatrix, np.ndarray], fractions: Iterable[float] = DEFAULT_CUTOFFS
) -> ConcentrationReport:
    fractions = tuple(float(f) for f in fractions)
    for f in fractions:
        _check_fraction("fraction", f)
    probs = softmax(_scores(S).reshape(-1))
    ordered = -np.sort(-probs)
    cumulative = np.cumsum(ordered)
    cutoffs = tuple((f, int(prefix_count(cumulative, f))) for f in fractions)
    return ConcentrationReport(
        sorted_scores=ordered,
        cumulative=cumulative,
        cutoffs=cutoffs,
        entropy=_entropy(probs),
    )


def block_attention_map(
    q: np.ndarray,
    k: np.ndarray,
    layout_q: BlockLayout,
    layout_k: BlockLayout,
    scaled: bool = True,
    chunk: int = 1024,
) -> np.ndarray:
    """[N_q_blocks x N_b] mean softmax mass each query block puts on each key block.

    Query rows are processed `chunk` at a time so the full [s x s] attention
    matrix is never materialized.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeMismatchError("block_attention_map", q.shape, k.shape, detail="head dims must agree")
    if layout_q.seq_len != q.shape[0] or layout_k.seq_len != k.shape[0]:
        raise ShapeMismatchError(
            "block_attention_map", (layout_q.seq_len, layout_k.seq_len), (q.shape[0], k.shape[0]),
            detail="layouts must cover the query and key rows",
        )
    scale = 1.0 / math.sqrt(q.shape[1]) if scaled else 1.0
    keys, starts = k[layout_k.token_order()], layout_k.block_starts()
    key_mass = np.empty((q.shape[0], layout_k.num_blocks))
    for start in range(0, q.shape[0], chunk):
        probs = softmax(q[start : start + chunk] @ keys.T, axis=1, scale=scale)
        key_mass[start : start + chunk] = np.add.reduceat(probs, starts, axis=1)
    block_sums = np.add.reduceat(key_mass[layout_q.token_order()], layout_q.block_starts(), axis=0)
    return block_sums / layout_q.block_len[:, None]
