import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple


class Scheme(Enum):
    TEMPORAL_1D = "1d"
    SPATIAL_2D = "2d"
    SPATIO_TEMPORAL_3D = "3d"

    @property
    def num_axes(self) -> int:
        return {"1d": 1, "2d": 2, "3d": 3}[self.value]


@dataclass(frozen=True)
class LatentGeometry:
    frames: int
    height: int
    width: int
    hidden: int = 64
    heads: int = 1

    def __post_init__(self):
        for name in ("frames", "height", "width", "hidden", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")

    @property
    def grid(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    @property
    def seq_len(self) -> int:
        return self.frames * self.height * self.width

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def token_index(self, t: int, h: int, w: int) -> int:
        return (t * self.height + h) * self.width + w


@dataclass(frozen=True)
class PartitionSpec:
    """Block sizes for one scheme: 1D (s_T,), 2D (s_H, s_W), 3D (s_T, s_H, s_W)."""

    scheme: Scheme
    block: Tuple[int, ...]

    def __post_init__(self):
        block = tuple(int(b) for b in self.block)
        if len(block) != self.scheme.num_axes:
            raise ValueError(
                f"{self.scheme.value} partition needs {self.scheme.num_axes} block sizes, got {len(block)}"
            )
        if any(b < 1 for b in block):
            raise ValueError(f"Block sizes must be at least 1, got {block}")
        object.__setattr__(self, "block", block)

    @staticmethod
    def temporal(frames: int) -> "PartitionSpec":
        return PartitionSpec(Scheme.TEMPORAL_1D, (frames,))

    @staticmethod
    def spatial(height: int, width: int) -> "PartitionSpec":
        return PartitionSpec(Scheme.SPATIAL_2D, (height, width))

    @staticmethod
    def spatio_temporal(frames: int, height: int, width: int) -> "PartitionSpec":
        return PartitionSpec(Scheme.SPATIO_TEMPORAL_3D, (frames, height, width))

    def axis_sizes(self, geom: LatentGeometry) -> Tuple[int, int, int]:
        """Block extent along (T, H, W); axes the scheme does not partition span the whole grid."""
        if self.scheme is Scheme.TEMPORAL_1D:
            return (self.block[0], geom.height, geom.width)
        if self.scheme is Scheme.SPATIAL_2D:
            return (geom.frames, self.block[0], self.block[1])
        return self.block

    def validate_for(self, geom: LatentGeometry) -> None:
        for axis, size, extent in zip("THW", self.axis_sizes(geom), geom.grid):
            if size > extent:
                raise ValueError(f"Block size {size} exceeds {axis} extent {extent}")

    def is_exact_for(self, geom: LatentGeometry) -> bool:
        return all(extent % size == 0 for size, extent in zip(self.axis_sizes(geom), geom.grid))

    def scaled_to(self, source: LatentGeometry, target: LatentGeometry) -> "PartitionSpec":
        """Same per-axis block counts on a resized grid."""
        sizes = []
        for size, src, dst in zip(self.axis_sizes(source), source.grid, target.grid):
            count = math.ceil(src / size)
            sizes.append(min(dst, max(1, math.ceil(dst / count))))
        t, h, w = sizes
        if self.scheme is Scheme.TEMPORAL_1D:
            return PartitionSpec.temporal(t)
        if self.scheme is Scheme.SPATIAL_2D:
            return PartitionSpec.spatial(h, w)
        return PartitionSpec.spatio_temporal(t, h, w)
