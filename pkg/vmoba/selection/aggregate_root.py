from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from vmoba.partition.aggregate_root import BlockLayout
from vmoba.tensor.value_objects import DType, Tensor


@dataclass(frozen=True, eq=False)
class SelectionMask:
    """One head's boolean [s x N_b] matrix of selected (query, key-block) pairs.

    Rows may be empty only when self-block inclusion was switched off; the
    attention operations reject such masks.
    """

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"Selection mask must be a matrix, got shape {mask.shape}")
        if mask.flags.writeable or mask.base is not None:
            mask = mask.copy()
            mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @staticmethod
    def full(num_queries: int, num_blocks: int) -> "SelectionMask":
        return SelectionMask(np.ones((num_queries, num_blocks), dtype=bool))

    @staticmethod
    def from_pairs(num_queries: int, num_blocks: int, queries, blocks) -> "SelectionMask":
        mask = np.zeros((num_queries, num_blocks), dtype=bool)
        mask[np.asarray(queries), np.asarray(blocks)] = True
        return SelectionMask(mask)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def selected_count(self) -> int:
        return int(self.mask.sum())

    @property
    def blocks_per_query(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def k_avg(self) -> float:
        return float(self.blocks_per_query.mean())

    def empty_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.mask.any(axis=1))

    def has_empty_rows(self) -> bool:
        return bool(self.empty_rows().size)

    def includes_self(self, layout: BlockLayout) -> bool:
        return bool(np.all(self.mask[np.arange(layout.seq_len), layout.token_to_block]))

    def is_subset_of(self, other: "SelectionMask") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def attended_tokens(self, layout: BlockLayout) -> np.ndarray:
        """Per query, the number of key tokens inside its selected blocks."""
        return self.mask.astype(np.int64) @ layout.block_len

    def token_mask(self, layout: BlockLayout) -> np.ndarray:
        """[s x s] boolean: may query q attend to key token j."""
        return self.mask[:, layout.token_to_block]

    def selection_groups(self) -> List[np.ndarray]:
        """Queries grouped by identical selection rows; groups ordered by first query."""
        _, first, inverse = np.unique(self.mask, axis=0, return_index=True, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        return [np.flatnonzero(inverse == g) for g in np.argsort(first, kind="stable")]

    def pairs(self, head: Optional[int] = 0) -> List[Dict[str, int]]:
        queries, blocks = np.nonzero(self.mask)
        return [{"head": head, "query": int(q), "block": int(b)} for q, b in zip(queries, blocks)]

    def to_tensor(self) -> Tensor:
        return Tensor.of(self.mask.astype(np.float32), DType.F32)
