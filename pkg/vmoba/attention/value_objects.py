import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from vmoba.partition.aggregate_root import BlockLayout
from vmoba.partition.value_objects import Scheme
from vmoba.selection.aggregate_root import SelectionMask


@dataclass(frozen=True, eq=False)
class AttentionIO:
    """Inputs and results of one head's attention: O [s x d_v] and per-query log-sum-exp."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    output: np.ndarray
    lse: np.ndarray
    scaled: bool = True

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.q.shape[1]) if self.scaled else 1.0

    def weights(self, token_mask=None) -> np.ndarray:
        """Implied attention probabilities [s x s], recomputed from lse."""
        logits = (self.q @ self.k.T) * self.scale
        if token_mask is not None:
            logits = np.where(token_mask, logits, -np.inf)
        return np.exp(logits - self.lse[:, None])


@dataclass(frozen=True, eq=False)
class AttentionGrads:
    dq: np.ndarray
    dk: np.ndarray
    dv: np.ndarray

    def max_abs(self) -> float:
        return float(max(np.abs(self.dq).max(), np.abs(self.dk).max(), np.abs(self.dv).max()))


@dataclass(frozen=True, eq=False)
class HeadResult:
    io: AttentionIO
    # None for full attention
    mask: Optional[SelectionMask] = None


@dataclass(frozen=True, eq=False)
class LayerResult:
    """Forward state of one multi-head layer, kept for the backward pass."""

    layer: int
    output: np.ndarray
    heads: Tuple[HeadResult, ...]
    layout: Optional[BlockLayout] = None

    @property
    def scheme(self) -> Optional[Scheme]:
        return self.layout.scheme if self.layout is not None else None

    @property
    def masks(self) -> Tuple[Optional[SelectionMask], ...]:
        return tuple(head.mask for head in self.heads)
