from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from vmoba.partition.value_objects import Scheme


class Scope(Enum):
    LOCAL = "local"
    GLOBAL = "global"


class Rule(Enum):
    TOPK = "topk"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class SelectionPolicy:
    scope: Scope
    rule: Rule
    k: Optional[int] = None
    tau: Optional[float] = None
    scaled: bool = True
    include_self: bool = True
    # per-scheme k, e.g. 1d: 2, 2d: 6, 3d: 18
    k_per_scheme: Tuple[Tuple[Scheme, int], ...] = ()

    def __post_init__(self):
        if self.rule is Rule.TOPK:
            if self.k is None and not self.k_per_scheme:
                raise ValueError("Top-k selection needs k")
            ks = [self.k] if self.k is not None else []
            ks += [k for _, k in self.k_per_scheme]
            if any(k < 1 for k in ks):
                raise ValueError(f"k must be at least 1, got {ks}")
        else:
            if self.tau is None or not (0.0 < self.tau <= 1.0):
                raise ValueError(f"Threshold tau must lie in (0, 1], got {self.tau}")

    @staticmethod
    def global_threshold(tau: float = 0.25, **flags) -> "SelectionPolicy":
        return SelectionPolicy(Scope.GLOBAL, Rule.THRESHOLD, tau=tau, **flags)

    @staticmethod
    def local_threshold(tau: float = 0.25, **flags) -> "SelectionPolicy":
        return SelectionPolicy(Scope.LOCAL, Rule.THRESHOLD, tau=tau, **flags)

    @staticmethod
    def global_topk(k: int, **flags) -> "SelectionPolicy":
        return SelectionPolicy(Scope.GLOBAL, Rule.TOPK, k=k, **flags)

    @staticmethod
    def local_topk(k: int, **flags) -> "SelectionPolicy":
        return SelectionPolicy(Scope.LOCAL, Rule.TOPK, k=k, **flags)

    @property
    def label(self) -> str:
        return f"{self.rule.value} + {self.scope.value}"

    def k_for(self, scheme: Scheme) -> Optional[int]:
        per_scheme: Dict[Scheme, int] = dict(self.k_per_scheme)
        return per_scheme.get(scheme, self.k)

    def for_scheme(self, scheme: Scheme) -> "SelectionPolicy":
        if self.rule is not Rule.TOPK:
            return self
        k = self.k_for(scheme)
        if k is None:
            raise ValueError(f"No k configured for scheme {scheme.value}")
        return replace(self, k=k, k_per_scheme=())


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """One head's query-token x key-block scores [s x N_b]."""

    scores: np.ndarray
    scaled: bool

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ValueError(f"Similarity must be a matrix, got shape {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("Similarity scores must be finite")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape

    @property
    def num_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def num_blocks(self) -> int:
        return self.scores.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.scores.size
