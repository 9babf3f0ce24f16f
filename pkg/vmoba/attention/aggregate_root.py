import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from einops import rearrange

from vmoba.errors import ShapeMismatchError
from vmoba.partition.aggregate_root import BlockLayout
from vmoba.partition.partition_api import DEFAULT_CYCLE, build_layout, scheme_for_layer
from vmoba.partition.value_objects import LatentGeometry, PartitionSpec, Scheme
from vmoba.selection.selection_api import select, similarity
from vmoba.selection.value_objects import SelectionPolicy
from .attention_api import (
    dense_attention,
    dense_backward,
    masked_dense_attention,
    sparse_backward,
    sparse_forward_gather,
    sparse_forward_streamed,
)
from .value_objects import HeadResult, LayerResult

logger = logging.getLogger(__name__)

PATHS: Dict[str, Callable] = {
    "masked": lambda q, k, v, layout, mask, scaled: masked_dense_attention(q, k, v, mask, layout, scaled),
    "gather": sparse_forward_gather,
    "streamed": sparse_forward_streamed,
}


class VMoBAAttention:
    """Multi-head attention layer: partition, mean key blocks, select, attend.

    The partition scheme follows the layer index through `cycle`. Without a
    selection policy the layer is plain full attention.
    """

    def __init__(
        self,
        geometry: LatentGeometry,
        policy: Optional[SelectionPolicy] = None,
        specs: Optional[Dict[Scheme, PartitionSpec]] = None,
        cycle: Sequence[Scheme] = DEFAULT_CYCLE,
        path: str = "masked",
        scaled: bool = True,
        workers: int = 1,
    ):
        if path not in PATHS:
            raise ValueError(f"Unknown attention path '{path}', expected one of {sorted(PATHS)}")
        if policy is not None:
            missing = [scheme.value for scheme in cycle if scheme not in (specs or {})]
            if missing:
                raise ValueError(f"No partition spec for schemes {missing}")
            scaled = policy.scaled
        self.geometry = geometry
        self.policy = policy
        self.specs = dict(specs or {})
        self.cycle = tuple(cycle)
        self.path = path
        self.scaled = scaled
        self.workers = max(1, workers)
        self._layouts: Dict[Scheme, BlockLayout] = {}

    @staticmethod
    def full(geometry: LatentGeometry, **options) -> "VMoBAAttention":
        return VMoBAAttention(geometry, None, **options)

    @staticmethod
    def vmoba(
        geometry: LatentGeometry,
        specs: Dict[Scheme, PartitionSpec],
        policy: Optional[SelectionPolicy] = None,
        cycle: Sequence[Scheme] = DEFAULT_CYCLE,
        **options,
    ) -> "VMoBAAttention":
        return VMoBAAttention(geometry, policy or SelectionPolicy.global_threshold(0.25), specs, cycle, **options)

    @staticmethod
    def moba1d(geometry: LatentGeometry, spec: PartitionSpec, k: int, **options) -> "VMoBAAttention":
        if spec.scheme is not Scheme.TEMPORAL_1D:
            raise ValueError("MoBA baseline needs a 1d partition spec")
        return VMoBAAttention(
            geometry, SelectionPolicy.local_topk(k), {spec.scheme: spec}, (Scheme.TEMPORAL_1D,), **options
        )

    @property
    def is_full(self) -> bool:
        return self.policy is None

    def layout_for(self, layer: int) -> Optional[BlockLayout]:
        if self.is_full:
            return None
        scheme = scheme_for_layer(layer, self.cycle)
        if scheme not in self._layouts:
            self._layouts[scheme] = build_layout(self.geometry, self.specs[scheme])
        return self._layouts[scheme]

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def _split(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.geometry.seq_len, self.geometry.hidden):
            raise ShapeMismatchError(
                "VMoBAAttention", x.shape, (self.geometry.seq_len, self.geometry.hidden)
            )
        return rearrange(x, "s (h d) -> h s d", h=self.geometry.heads)

    def _map_heads(self, fn, count: int) -> List:
        if self.workers == 1 or count == 1:
            return [fn(i) for i in range(count)]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, range(count)))

    def forward(self, q: np.ndarray, k: np.ndarray, v: np.ndarray, layer: int = 0) -> LayerResult:
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        layout = self.layout_for(layer)

        def run_head(i: int) -> HeadResult:
            if layout is None:
                return HeadResult(dense_attention(qh[i], kh[i], vh[i], self.scaled))
            means = layout.means(kh[i])
            scores = similarity(qh[i], means, self.policy.scaled)
            mask = select(scores, self.policy, layout)
            io = PATHS[self.path](qh[i], kh[i], vh[i], layout, mask, self.scaled)
            return HeadResult(io, mask)

        heads = tuple(self._map_heads(run_head, self.geometry.heads))
        output = rearrange(np.stack([head.io.output for head in heads]), "h s d -> s (h d)")
        return LayerResult(layer=layer, output=output, heads=heads, layout=layout)

    def backward(self, result: LayerResult, d_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_heads = self._split(d_out)

        def run_head(i: int):
            head = result.heads[i]
            if head.mask is None:
                return dense_backward(head.io, d_heads[i])
            return sparse_backward(head.io, head.io.q, head.io.k, head.io.v, result.layout, head.mask, d_heads[i])

        grads = self._map_heads(run_head, self.geometry.heads)
        merge = lambda parts: rearrange(np.stack(parts), "h s d -> s (h d)")  # noqa: E731
        return (
            merge([g.dq for g in grads]),
            merge([g.dk for g in grads]),
            merge([g.dv for g in grads]),
        )
