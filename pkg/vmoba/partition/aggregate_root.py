import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from vmoba.errors import ShapeMismatchError
from .value_objects import LatentGeometry, PartitionSpec, Scheme


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BlockLayout:
    """Bijective token -> key-block assignment for one partition scheme.

    Block ids enumerate the block grid T-major, then H, then W. Axes the scheme
    does not partition contribute a single block.
    """

    geometry: LatentGeometry
    spec: PartitionSpec
    grid_blocks: Tuple[int, int, int]
    token_to_block: np.ndarray
    block_tokens: Tuple[np.ndarray, ...]
    block_len: np.ndarray

    @staticmethod
    def build(geom: LatentGeometry, spec: PartitionSpec) -> "BlockLayout":
        spec.validate_for(geom)
        sizes = spec.axis_sizes(geom)
        n_t, n_h, n_w = (math.ceil(extent / size) for extent, size in zip(geom.grid, sizes))
        s_t, s_h, s_w = sizes

        t, h, w = np.meshgrid(
            np.arange(geom.frames), np.arange(geom.height), np.arange(geom.width), indexing="ij"
        )
        ids = ((t // s_t) * n_h + h // s_h) * n_w + w // s_w
        token_to_block = ids.reshape(-1).astype(np.int64)

        num_blocks = n_t * n_h * n_w
        block_len = np.bincount(token_to_block, minlength=num_blocks).astype(np.int64)
        # stable sort keeps token indices ascending inside each block
        order = np.argsort(token_to_block, kind="stable")
        block_tokens = tuple(_frozen(chunk) for chunk in np.split(order, np.cumsum(block_len)[:-1]))

        return BlockLayout(
            geometry=geom,
            spec=spec,
            grid_blocks=(n_t, n_h, n_w),
            token_to_block=_frozen(token_to_block),
            block_tokens=block_tokens,
            block_len=_frozen(block_len),
        )

    @property
    def scheme(self) -> Scheme:
        return self.spec.scheme

    @property
    def num_blocks(self) -> int:
        return len(self.block_len)

    @property
    def seq_len(self) -> int:
        return len(self.token_to_block)

    @property
    def axis_blocks(self) -> Tuple[int, ...]:
        """Block counts along the axes the scheme partitions."""
        n_t, n_h, n_w = self.grid_blocks
        if self.scheme is Scheme.TEMPORAL_1D:
            return (n_t,)
        if self.scheme is Scheme.SPATIAL_2D:
            return (n_h, n_w)
        return (n_t, n_h, n_w)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.block_len == self.block_len[0]))

    def block_of(self, token: int) -> int:
        return int(self.token_to_block[token])

    def token_order(self) -> np.ndarray:
        """Token indices grouped by block, blocks ascending."""
        return np.concatenate(self.block_tokens)

    def block_starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.block_len)[:-1]))

    def one_hot(self, dtype=np.float64) -> np.ndarray:
        """[s x N_b] token membership matrix."""
        member = np.zeros((self.seq_len, self.num_blocks), dtype=dtype)
        member[np.arange(self.seq_len), self.token_to_block] = 1
        return member

    def means(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys)
        if keys.ndim != 2 or keys.shape[0] != self.seq_len:
            raise ShapeMismatchError("block_means", keys.shape, (self.seq_len, "d"), detail="key rows must equal s")
        sums = np.add.reduceat(keys[self.token_order()], self.block_starts(), axis=0)
        return sums / self.block_len[:, None].astype(keys.dtype)
