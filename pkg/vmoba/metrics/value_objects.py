from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

import numpy as np


@dataclass(frozen=True)
class FlopsReport:
    """Matrix-product FLOPs of one attention layer; 2 flops per multiply-add."""

    selection_flops: int
    attention_flops: int
    dense_flops: int
    k_avg: float

    def __post_init__(self):
        if min(self.selection_flops, self.attention_flops, self.dense_flops) < 0:
            raise ValueError("FLOP counts cannot be negative")
        if self.selection_flops + self.attention_flops == 0:
            raise ValueError("A layer with zero FLOPs has no defined speedup")

    @property
    def total_flops(self) -> int:
        return self.selection_flops + self.attention_flops

    @property
    def speedup(self) -> float:
        return self.dense_flops / self.total_flops

    def to_dict(self) -> Dict[str, Any]:
        return {
            "selection_flops": self.selection_flops,
            "attention_flops": self.attention_flops,
            "total_flops": self.total_flops,
            "dense_flops": self.dense_flops,
            "k_avg": self.k_avg,
            "speedup": self.speedup,
        }


@dataclass(frozen=True, eq=False)
class ConcentrationReport:
    """Descending normalized scores of one head, their cumulative curve and cutoffs.

    A cutoff is the number of leading pairs needed to reach the fraction.
    """

    sorted_scores: np.ndarray
    cumulative: np.ndarray
    cutoffs: Tuple[Tuple[float, int], ...]
    entropy: float

    def __post_init__(self):
        if self.sorted_scores.shape != self.cumulative.shape:
            raise ValueError("Scores and cumulative curve differ in length")
        if np.any(np.diff(self.cumulative) < 0):
            raise ValueError("Cumulative curve must be nondecreasing")
        if abs(float(self.cumulative[-1]) - 1.0) > 1e-6:
            raise ValueError(f"Cumulative curve ends at {self.cumulative[-1]}, expected 1")

    @property
    def num_pairs(self) -> int:
        return len(self.sorted_scores)

    def cutoff_index(self, fraction: float) -> int:
        for f, index in self.cutoffs:
            if f == fraction:
                return index
        raise KeyError(f"No cutoff computed for fraction {fraction}")

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"index": i + 1, "score": float(score), "cumulative": float(cum)}
            for i, (score, cum) in enumerate(zip(self.sorted_scores, self.cumulative))
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_pairs": self.num_pairs,
            "entropy": self.entropy,
            "cutoffs": {str(f): index for f, index in self.cutoffs},
            "cutoff_fraction_of_pairs": {str(f): index / self.num_pairs for f, index in self.cutoffs},
        }
