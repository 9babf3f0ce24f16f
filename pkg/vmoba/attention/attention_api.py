import logging
import math
from typing import Optional, Tuple

import numpy as np

from vmoba.errors import EmptyAttentionError, ShapeMismatchError
from vmoba.partition.aggregate_root import BlockLayout
from vmoba.selection.aggregate_root import SelectionMask
from .value_objects import AttentionGrads, AttentionIO

logger = logging.getLogger(__name__)


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _check_qkv(operation: str, q: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatchError(operation, q.shape, k.shape, v.shape, detail="Q, K, V must be matrices")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatchError(operation, q.shape, k.shape, detail="Q and K head dims differ")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatchError(operation, k.shape, v.shape, detail="K and V row counts differ")


def _check_mask(operation: str, q: np.ndarray, k: np.ndarray, layout: BlockLayout, mask: SelectionMask) -> None:
    if layout.seq_len != k.shape[0] or mask.shape != (q.shape[0], layout.num_blocks):
        raise ShapeMismatchError(
            operation, mask.shape, (q.shape[0], layout.num_blocks), detail=f"layout covers {layout.seq_len} keys"
        )
    empty = mask.empty_rows()
    if empty.size:
        raise EmptyAttentionError(empty)


def _scale(q: np.ndarray, scaled: bool) -> float:
    return 1.0 / math.sqrt(q.shape[1]) if scaled else 1.0


def _attend(logits: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise stable softmax(logits) @ v plus the log-sum-exp of each row."""
    m = logits.max(axis=1)
    p = np.exp(logits - m[:, None])
    l = p.sum(axis=1)
    out = (p @ v) / l[:, None]
    return out, m + np.log(l)


def _as_arrays(*arrays):
    return tuple(np.asarray(a) for a in arrays)


# ==========================================
# FORWARD
# ==========================================

def dense_attention(q, k, v, scaled: bool = True) -> AttentionIO:
    q, k, v = _as_arrays(q, k, v)
    _check_qkv("dense_attention", q, k, v)
    logits = (q @ k.T) * _scale(q, scaled)
    out, lse = _attend(logits, v)
    return AttentionIO(q, k, v, out, lse, scaled)


def masked_dense_attention(q, k, v, mask: SelectionMask, layout: BlockLayout, scaled: bool = True) -> AttentionIO:
    """Token-level oracle: logits of keys in unselected blocks are set to -inf."""
    q, k, v = _as_arrays(q, k, v)
    _check_qkv("masked_dense_attention", q, k, v)
    _check_mask("masked_dense_attention", q, k, layout, mask)
    logits = (q @ k.T) * _scale(q, scaled)
    logits = np.where(mask.token_mask(layout), logits, -np.inf)
    out, lse = _attend(logits, v)
    return AttentionIO(q, k, v, out, lse, scaled)


def sparse_forward_gather(q, k, v, layout: BlockLayout, mask: SelectionMask, scaled: bool = True) -> AttentionIO:
    """Per query, gather the K/V rows of its selected blocks and run one softmax over them."""
    q, k, v = _as_arrays(q, k, v)
    _check_qkv("sparse_forward_gather", q, k, v)
    _check_mask("sparse_forward_gather", q, k, layout, mask)
    scale = _scale(q, scaled)

    out = np.empty((q.shape[0], v.shape[1]), dtype=np.result_type(q, v))
    lse = np.empty(q.shape[0], dtype=out.dtype)
    # queries sharing a selection row share the gathered keys
    for group in mask.selection_groups():
        blocks = np.flatnonzero(mask.mask[group[0]])
        idx = np.concatenate([layout.block_tokens[b] for b in blocks])
        logits = (q[group] @ k[idx].T) * scale
        out[group], lse[group] = _attend(logits, v[idx])
    return AttentionIO(q, k, v, out, lse, scaled)


def sparse_forward_streamed(q, k, v, layout: BlockLayout, mask: SelectionMask, scaled: bool = True) -> AttentionIO:
    """Blocks in ascending id order; partial softmax results merged by log-sum-exp rescaling."""
    q, k, v = _as_arrays(q, k, v)
    _check_qkv("sparse_forward_streamed", q, k, v)
    _check_mask("sparse_forward_streamed", q, k, layout, mask)
    scale = _scale(q, scaled)
    dtype = np.result_type(q, v)

    s = q.shape[0]
    running_max = np.full(s, -np.inf, dtype=dtype)
    running_sum = np.zeros(s, dtype=dtype)
    acc = np.zeros((s, v.shape[1]), dtype=dtype)

    for b in range(layout.num_blocks):
        rows = np.flatnonzero(mask.mask[:, b])
        if rows.size == 0:
            continue
        idx = layout.block_tokens[b]
        logits = (q[rows] @ k[idx].T) * scale
        m_old = running_max[rows]
        m_new = np.maximum(m_old, logits.max(axis=1))
        alpha = np.exp(m_old - m_new)
        p = np.exp(logits - m_new[:, None])
        running_sum[rows] = running_sum[rows] * alpha + p.sum(axis=1)
        acc[rows] = acc[rows] * alpha[:, None] + p @ v[idx]
        running_max[rows] = m_new

    out = acc / running_sum[:, None]
    return AttentionIO(q, k, v, out, running_max + np.log(running_sum), scaled)


# ==========================================
# BACKWARD
# ==========================================

def _backward(io: AttentionIO, d_out: np.ndarray, token_mask: Optional[np.ndarray]) -> AttentionGrads:
    d_out = np.asarray(d_out)
    if d_out.shape != io.output.shape:
        raise ShapeMismatchError("attention backward", d_out.shape, io.output.shape, detail="dO must match O")
    scale = io.scale
    probs = io.weights(token_mask)
    dv = probs.T @ d_out
    d_probs = d_out @ io.v.T
    delta = np.sum(d_out * io.output, axis=1)
    d_logits = probs * (d_probs - delta[:, None])
    dq = (d_logits @ io.k) * scale
    dk = (d_logits.T @ io.q) * scale
    return AttentionGrads(dq, dk, dv)


def dense_backward(io: AttentionIO, d_out) -> AttentionGrads:
    return _backward(io, d_out, None)


def sparse_backward(io: AttentionIO, q, k, v, layout: BlockLayout, mask: SelectionMask, d_out) -> AttentionGrads:
    """Softmax-attention gradients over selected (query, key) pairs only; the mask is a constant."""
    q, k, v = _as_arrays(q, k, v)
    if q.shape != io.q.shape or k.shape != io.k.shape or v.shape != io.v.shape:
        raise ShapeMismatchError("sparse_backward", q.shape, io.q.shape, detail="inputs differ from the forward")
    _check_mask("sparse_backward", q, k, layout, mask)
    return _backward(io, d_out, mask.token_mask(layout))
