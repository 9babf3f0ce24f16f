from .value_objects import LatentGeometry, PartitionSpec, Scheme
from .aggregate_root import BlockLayout
from .partition_api import (
    DEFAULT_CYCLE,
    block_means,
    build_layout,
    layout_for_layer,
    parse_cycle,
    scheme_for_layer,
    specs_by_scheme,
)

__all__ = [
    "LatentGeometry",
    "PartitionSpec",
    "Scheme",
    "BlockLayout",
    "DEFAULT_CYCLE",
    "block_means",
    "build_layout",
    "layout_for_layer",
    "parse_cycle",
    "scheme_for_layer",
    "specs_by_scheme",
]
