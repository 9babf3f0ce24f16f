import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from vmoba.attention.aggregate_root import VMoBAAttention
from vmoba.attention.value_objects import LayerResult
from vmoba.partition.partition_api import scheme_for_layer, specs_by_scheme
from vmoba.partition.value_objects import Scheme
from vmoba.selection.value_objects import SelectionPolicy
from .value_objects import AttentionMode, ToyModelConfig

logger = logging.getLogger(__name__)

NUM_FEATURES = 8


def build_attention(config: ToyModelConfig) -> VMoBAAttention:
    options = {"path": config.path, "workers": config.workers}
    if config.mode is AttentionMode.FULL:
        return VMoBAAttention.full(config.geometry, **options)
    if config.mode is AttentionMode.MOBA1D:
        spec = config.spec_for(Scheme.TEMPORAL_1D)
        if spec is None:
            raise ValueError("moba1d mode needs a 1d partition spec")
        return VMoBAAttention.moba1d(config.geometry, spec, config.moba_k, **options)
    return VMoBAAttention.vmoba(
        config.geometry,
        specs_by_scheme(config.specs),
        SelectionPolicy.global_threshold(config.tau),
        config.cycle,
        **options,
    )


class ToyModel:
    """Per-token input map, residual multi-head attention layers, per-token output map.

    No feed-forward blocks and no normalization; every layer is
    h <- h + attention(h Wq, h Wk, h Wv) Wo.
    """

    def __init__(self, config: ToyModelConfig, params: Dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.attention = build_attention(config)

    @staticmethod
    def create(config: ToyModelConfig) -> "ToyModel":
        rng = np.random.default_rng(config.seed)
        hidden = config.hidden

        def init(fan_in: int, shape: Tuple[int, ...], gain: float = 1.0) -> np.ndarray:
            return (rng.standard_normal(shape) * (gain / math.sqrt(fan_in))).astype(np.float32)

        params = {"w_in": init(NUM_FEATURES, (NUM_FEATURES, hidden))}
        for layer in range(config.layers):
            params[f"wq.{layer}"] = init(hidden, (hidden, hidden))
            params[f"wk.{layer}"] = init(hidden, (hidden, hidden))
            params[f"wv.{layer}"] = init(hidden, (hidden, hidden))
            params[f"wo.{layer}"] = init(hidden, (hidden, hidden), gain=0.5)
        params["w_out"] = init(hidden, (hidden, 1))
        params["b_out"] = np.zeros(1, dtype=np.float32)
        return ToyModel(config, params)

    def layer_schemes(self) -> List[str]:
        if self.attention.is_full:
            return ["full"] * self.config.layers
        return [scheme_for_layer(layer, self.attention.cycle).value for layer in range(self.config.layers)]

    # ------------------------------------------------------------------
    # forward / backward for one clip
    # ------------------------------------------------------------------

    def _forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, LayerResult]]]:
        p = self.params
        h = x @ p["w_in"]
        cache = []
        for layer in range(self.config.layers):
            result = self.attention.forward(h @ p[f"wq.{layer}"], h @ p[f"wk.{layer}"], h @ p[f"wv.{layer}"], layer)
            cache.append((h, result))
            h = h + result.output @ p[f"wo.{layer}"]
        cache.append((h, None))
        return h @ p["w_out"] + p["b_out"], cache

    def _backward(
        self, x: np.ndarray, cache: List[Tuple[np.ndarray, LayerResult]], d_pred: np.ndarray, grads: Dict[str, np.ndarray]
    ) -> None:
        p = self.params
        h_last = cache[-1][0]
        grads["w_out"] += h_last.T @ d_pred
        grads["b_out"] += d_pred.sum(axis=0)
        d_h = d_pred @ p["w_out"].T
        for layer in reversed(range(self.config.layers)):
            h, result = cache[layer]
            grads[f"wo.{layer}"] += result.output.T @ d_h
            dq, dk, dv = self.attention.backward(result, d_h @ p[f"wo.{layer}"].T)
            grads[f"wq.{layer}"] += h.T @ dq
            grads[f"wk.{layer}"] += h.T @ dk
            grads[f"wv.{layer}"] += h.T @ dv
            d_h = d_h + dq @ p[f"wq.{layer}"].T + dk @ p[f"wk.{layer}"].T + dv @ p[f"wv.{layer}"].T
        grads["w_in"] += x.T @ d_h

    # ------------------------------------------------------------------
    # batch API
    # ------------------------------------------------------------------

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs)
        return np.stack([self._forward(x)[0] for x in inputs])

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        diff = self.predict(inputs) - np.asarray(targets)
        return float(np.mean(diff.astype(np.float64) ** 2))

    def loss_and_grads(self, inputs: np.ndarray, targets: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        inputs, targets = np.asarray(inputs), np.asarray(targets)
        count = targets.size
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        total = 0.0
        for x, target in zip(inputs, targets):
            pred, cache = self._forward(x)
            diff = pred - target
            total += float(np.sum(diff.astype(np.float64) ** 2))
            self._backward(x, cache, diff * np.float32(2.0 / count), grads)
        return total / count, grads

    def apply_gradients(self, grads: Dict[str, np.ndarray], learning_rate: float) -> None:
        lr = np.float32(learning_rate)
        for name, grad in grads.items():
            self.params[name] = self.params[name] - lr * grad

    def params_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(value))) for value in self.params.values())
