import logging
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .aggregate_root import BlockLayout
from .value_objects import LatentGeometry, PartitionSpec, Scheme

logger = logging.getLogger(__name__)

DEFAULT_CYCLE: Tuple[Scheme, ...] = (
    Scheme.TEMPORAL_1D,
    Scheme.SPATIAL_2D,
    Scheme.SPATIO_TEMPORAL_3D,
)


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def parse_cycle(text: str) -> Tuple[Scheme, ...]:
    """'1-2-3d' -> (1D, 2D, 3D); '2-3d' and '1d' name the partition ablations."""
    body = text.strip().lower()
    if body.endswith("d"):
        body = body[:-1]
    parts = [p for p in body.split("-") if p]
    if not parts:
        raise ValueError(f"Empty partition cycle '{text}'")
    try:
        cycle = tuple(Scheme(f"{p}d") for p in parts)
    except ValueError:
        raise ValueError(f"Unknown partition cycle '{text}'; use e.g. '1-2-3d', '2-3d' or '1d'")
    if len(set(cycle)) != len(cycle):
        raise ValueError(f"Partition cycle '{text}' repeats a scheme")
    return cycle


def specs_by_scheme(specs: Iterable[PartitionSpec]) -> Dict[Scheme, PartitionSpec]:
    mapping: Dict[Scheme, PartitionSpec] = {}
    for spec in specs:
        if spec.scheme in mapping:
            raise ValueError(f"Duplicate partition spec for scheme {spec.scheme.value}")
        mapping[spec.scheme] = spec
    return mapping


# ==========================================
# OPERATIONS
# ==========================================

def scheme_for_layer(layer: int, cycle: Sequence[Scheme] = DEFAULT_CYCLE) -> Scheme:
    if layer < 0:
        raise ValueError(f"Layer index must be non-negative, got {layer}")
    return cycle[layer % len(cycle)]


def build_layout(geom: LatentGeometry, spec: PartitionSpec) -> BlockLayout:
    layout = BlockLayout.build(geom, spec)
    logger.debug(
        "%s layout on %s: %d blocks %s", spec.scheme.value, geom.grid, layout.num_blocks, layout.axis_blocks
    )
    return layout


def block_means(keys: np.ndarray, layout: BlockLayout) -> np.ndarray:
    return layout.means(keys)


def layout_for_layer(
    geom: LatentGeometry,
    specs: Dict[Scheme, PartitionSpec],
    layer: int,
    cycle: Sequence[Scheme] = DEFAULT_CYCLE,
) -> BlockLayout:
    scheme = scheme_for_layer(layer, cycle)
    if scheme not in specs:
        raise ValueError(f"No partition spec configured for scheme {scheme.value}")
    return build_layout(geom, specs[scheme])
