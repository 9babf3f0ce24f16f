import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from vmoba.partition.partition_api import DEFAULT_CYCLE
from vmoba.partition.value_objects import LatentGeometry, PartitionSpec, Scheme


class AttentionMode(Enum):
    FULL = "full"
    VMOBA = "vmoba"
    MOBA1D = "moba1d"


class MotionPattern(Enum):
    TRANSLATE = "translate"
    ROTATE = "rotate"


def default_toy_specs() -> Tuple[PartitionSpec, ...]:
    return (
        PartitionSpec.temporal(2),
        PartitionSpec.spatial(4, 4),
        PartitionSpec.spatio_temporal(4, 4, 4),
    )


@dataclass(frozen=True)
class ToyModelConfig:
    layers: int = 3
    heads: int = 2
    hidden: int = 32
    geometry: LatentGeometry = LatentGeometry(8, 12, 16, hidden=32, heads=2)
    mode: AttentionMode = AttentionMode.VMOBA
    tau: float = 0.25
    moba_k: int = 2
    steps: int = 300
    learning_rate: float = 0.05
    seed: int = 0
    batch: int = 1
    eval_every: int = 25
    pattern: MotionPattern = MotionPattern.TRANSLATE
    max_speed: float = 1.0
    specs: Tuple[PartitionSpec, ...] = field(default_factory=default_toy_specs)
    cycle: Tuple[Scheme, ...] = DEFAULT_CYCLE
    path: str = "masked"
    workers: int = 1

    def __post_init__(self):
        if self.layers < 3:
            raise ValueError(f"Toy model needs at least 3 layers to complete the scheme cycle, got {self.layers}")
        if self.heads < 1 or self.hidden % self.heads != 0:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.steps < 0:
            raise ValueError("steps cannot be negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch < 1 or self.eval_every < 1:
            raise ValueError("batch and eval_every must be at least 1")
        if self.mode is AttentionMode.VMOBA and not (0.0 < self.tau <= 1.0):
            raise ValueError(f"Threshold tau must lie in (0, 1], got {self.tau}")
        if self.max_speed < 0:
            raise ValueError("max_speed cannot be negative")
        # the attention layers read hidden/heads from the geometry
        if self.geometry.hidden != self.hidden or self.geometry.heads != self.heads:
            object.__setattr__(
                self,
                "geometry",
                LatentGeometry(*self.geometry.grid, hidden=self.hidden, heads=self.heads),
            )

    @property
    def label(self) -> str:
        if self.mode is AttentionMode.VMOBA:
            return f"vmoba(tau={self.tau:g})"
        if self.mode is AttentionMode.MOBA1D:
            return f"moba1d(k={self.moba_k})"
        return "full"

    def spec_for(self, scheme: Scheme) -> Optional[PartitionSpec]:
        for spec in self.specs:
            if spec.scheme is scheme:
                return spec
        return None

    def with_mode(self, mode: AttentionMode, **changes) -> "ToyModelConfig":
        return replace(self, mode=mode, **changes)

    def with_geometry(self, geometry: LatentGeometry) -> "ToyModelConfig":
        specs = tuple(spec.scaled_to(self.geometry, geometry) for spec in self.specs)
        return replace(self, geometry=geometry, specs=specs)


@dataclass(frozen=True)
class BlobTrack:
    """A 2-D Gaussian blob moving over the frames of a clip.

    Translation adds `velocity` per frame; `angular` rotates the position about
    `pivot` by that many radians per frame.
    """

    center: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    sigma: float = 2.0
    amplitude: float = 1.0
    angular: float = 0.0
    pivot: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("Blob sigma must be positive")

    def position(self, time: float) -> Tuple[float, float]:
        h = self.center[0] + self.velocity[0] * time
        w = self.center[1] + self.velocity[1] * time
        if self.angular:
            angle = self.angular * time
            dh, dw = h - self.pivot[0], w - self.pivot[1]
            h = self.pivot[0] + math.cos(angle) * dh - math.sin(angle) * dw
            w = self.pivot[1] + math.sin(angle) * dh + math.cos(angle) * dw
        return (h, w)

    def advanced(self, frames: float) -> "BlobTrack":
        """The same motion started `frames` later (translation only)."""
        if self.angular:
            raise ValueError("advanced() is defined for translating blobs")
        h, w = self.position(frames)
        return replace(self, center=(h, w))


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class ComparisonReport:
    """Loss traces of several runs compared against the first one (the baseline)."""

    labels: Tuple[str, ...]
    steps: Tuple[int, ...]
    ratios: Dict[str, np.ndarray]
    final_gap: Dict[str, float]
    area_between: Dict[str, float]
    final_loss: Dict[str, float]

    @property
    def baseline(self) -> str:
        return self.labels[0]

    def max_ratio_deviation(self, label: str) -> float:
        return float(np.max(np.abs(self.ratios[label] - 1.0)))

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for i, step in enumerate(self.steps):
            row: Dict[str, Any] = {"step": step}
            for label in self.labels[1:]:
                row[f"ratio[{label}]"] = float(self.ratios[label][i])
            rows.append(row)
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline": self.baseline,
            "labels": list(self.labels),
            "final_loss": self.final_loss,
            "final_gap": self.final_gap,
            "area_between": self.area_between,
            "max_ratio_deviation": {label: _finite_or_none(self.max_ratio_deviation(label)) for label in self.labels[1:]},
        }
