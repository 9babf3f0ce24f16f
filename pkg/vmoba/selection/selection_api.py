import logging
import math

import numpy as np

from vmoba.errors import ShapeMismatchError
from vmoba.partition.aggregate_root import BlockLayout
from vmoba.tensor.tensor_api import prefix_count, softmax
from .aggregate_root import SelectionMask
from .value_objects import Rule, Scope, SelectionPolicy, SimilarityMatrix

logger = logging.getLogger(__name__)


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _check_layout(S: SimilarityMatrix, layout: BlockLayout) -> None:
    if S.shape != (layout.seq_len, layout.num_blocks):
        raise ShapeMismatchError("selection", S.shape, (layout.seq_len, layout.num_blocks))


def _check_tau(tau: float) -> None:
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"Threshold tau must lie in (0, 1], got {tau}")


def _global_order(scores: np.ndarray) -> np.ndarray:
    """Flat pair indices by (score desc, query asc, block asc)."""
    flat = scores.reshape(-1)
    # flat index q * N_b + b already orders ties by (query, block); a stable sort keeps it
    return np.argsort(-flat, kind="stable")


def _row_order(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-scores, axis=1, kind="stable")


def _mask_from_flat(shape, flat_indices: np.ndarray) -> np.ndarray:
    mask = np.zeros(shape[0] * shape[1], dtype=bool)
    mask[flat_indices] = True
    return mask.reshape(shape)


def _with_self(mask: np.ndarray, layout: BlockLayout, include_self: bool) -> SelectionMask:
    if include_self:
        mask[np.arange(layout.seq_len), layout.token_to_block] = True
    return SelectionMask(mask)


# ==========================================
# OPERATIONS
# ==========================================

def similarity(q_head: np.ndarray, means: np.ndarray, scaled: bool = True) -> SimilarityMatrix:
    q_head = np.asarray(q_head)
    means = np.asarray(means)
    if q_head.ndim != 2 or means.ndim != 2 or q_head.shape[1] != means.shape[1]:
        raise ShapeMismatchError("similarity", q_head.shape, means.shape, detail="head dims must agree")
    scores = q_head @ means.T
    if scaled:
        scores = scores * (1.0 / math.sqrt(q_head.shape[1]))
    return SimilarityMatrix(scores, scaled)


def select_global_threshold(
    S: SimilarityMatrix, tau: float, layout: BlockLayout, include_self: bool = True
) -> SelectionMask:
    """Shortest prefix of pairs, by descending head-wide softmax mass, reaching tau."""
    _check_tau(tau)
    _check_layout(S, layout)
    order = _global_order(S.scores)
    # normalize in f64 so the cumulative cut is not at the mercy of f32 rounding
    mass = softmax(S.scores.astype(np.float64).reshape(-1))
    count = prefix_count(np.cumsum(mass[order]), tau)
    mask = _mask_from_flat(S.shape, order[:count])
    return _with_self(mask, layout, include_self)


def select_global_topk(S: SimilarityMatrix, k: int, layout: BlockLayout, include_self: bool = True) -> SelectionMask:
    _check_layout(S, layout)
    if not (1 <= k <= S.num_pairs):
        raise ValueError(f"Global top-k needs 1 <= k <= {S.num_pairs}, got {k}")
    order = _global_order(S.scores)
    mask = _mask_from_flat(S.shape, order[:k])
    return _with_self(mask, layout, include_self)


def select_local_topk(S: SimilarityMatrix, k: int, layout: BlockLayout, include_self: bool = True) -> SelectionMask:
    """Per query the k best blocks; the own block takes the k-th slot when it is not already chosen."""
    _check_layout(S, layout)
    if not (1 <= k <= S.num_blocks):
        raise ValueError(f"Local top-k needs 1 <= k <= {S.num_blocks}, got {k}")
    chosen = _row_order(S.scores)[:, :k].copy()
    if include_self:
        own = layout.token_to_block
        missing = ~np.any(chosen == own[:, None], axis=1)
        chosen[missing, k - 1] = own[missing]
    mask = np.zeros(S.shape, dtype=bool)
    np.put_along_axis(mask, chosen, True, axis=1)
    return SelectionMask(mask)


def select_local_threshold(
    S: SimilarityMatrix, tau: float, layout: BlockLayout, include_self: bool = True
) -> SelectionMask:
    _check_tau(tau)
    _check_layout(S, layout)
    order = _row_order(S.scores)
    mass = softmax(S.scores.astype(np.float64), axis=1)
    sorted_mass = np.take_along_axis(mass, order, axis=1)
    counts = np.asarray(prefix_count(np.cumsum(sorted_mass, axis=1), tau)).reshape(-1, 1)
    keep = np.arange(S.num_blocks)[None, :] < counts
    mask = np.zeros(S.shape, dtype=bool)
    np.put_along_axis(mask, order, keep, axis=1)
    return _with_self(mask, layout, include_self)


def select(S: SimilarityMatrix, policy: SelectionPolicy, layout: BlockLayout) -> SelectionMask:
    policy = policy.for_scheme(layout.scheme)
    if policy.scope is Scope.GLOBAL and policy.rule is Rule.THRESHOLD:
        return select_global_threshold(S, policy.tau, layout, policy.include_self)
    if policy.scope is Scope.GLOBAL:
        return select_global_topk(S, policy.k, layout, policy.include_self)
    if policy.rule is Rule.THRESHOLD:
        return select_local_threshold(S, policy.tau, layout, policy.include_self)
    return select_local_topk(S, policy.k, layout, policy.include_self)
