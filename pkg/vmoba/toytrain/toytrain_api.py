import logging
import time
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from vmoba.errors import DivergenceError
from vmoba.partition.value_objects import LatentGeometry
from vmoba.tensor.value_objects import DType, Tensor
from .aggregate_root import ToyModel
from .entities import LossTrace
from .value_objects import BlobTrack, ComparisonReport, MotionPattern, ToyModelConfig

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("content", "bias", "sin_t", "cos_t", "sin_h", "cos_h", "sin_w", "cos_w")


# ==========================================
# SYNTHETIC DATA
# ==========================================

def render_field(geom: LatentGeometry, tracks: Sequence[BlobTrack], time_offset: float = 0.0) -> np.ndarray:
    """[T x H x W] sum of the blobs, frame t drawn at time t + time_offset."""
    hh, ww = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    field = np.zeros(geom.grid, dtype=np.float64)
    for t in range(geom.frames):
        for track in tracks:
            ch, cw = track.position(t + time_offset)
            dist2 = (hh - ch) ** 2 + (ww - cw) ** 2
            field[t] += track.amplitude * np.exp(-dist2 / (2.0 * track.sigma**2))
    return field


def position_features(geom: LatentGeometry) -> np.ndarray:
    """[s x 6] sin/cos of the normalized t, h and w coordinates in flat token order."""
    t, h, w = np.meshgrid(
        np.arange(geom.frames) / geom.frames,
        np.arange(geom.height) / geom.height,
        np.arange(geom.width) / geom.width,
        indexing="ij",
    )
    angles = [2.0 * np.pi * axis.reshape(-1) for axis in (t, h, w)]
    columns = []
    for angle in angles:
        columns += [np.sin(angle), np.cos(angle)]
    return np.stack(columns, axis=1)


def token_features(geom: LatentGeometry, field: np.ndarray) -> np.ndarray:
    content = field.reshape(-1, 1)
    bias = np.ones_like(content)
    return np.concatenate([content, bias, position_features(geom)], axis=1).astype(np.float32)


def random_tracks(
    rng: np.random.Generator,
    geom: LatentGeometry,
    count: int = 2,
    max_speed: float = 1.0,
    pattern: MotionPattern = MotionPattern.TRANSLATE,
) -> List[BlobTrack]:
    pivot = ((geom.height - 1) / 2.0, (geom.width - 1) / 2.0)
    span = min(geom.height, geom.width)
    tracks = []
    for _ in range(count):
        center = (float(rng.uniform(0, geom.height)), float(rng.uniform(0, geom.width)))
        sigma = float(rng.uniform(0.1, 0.25) * span)
        amplitude = float(rng.uniform(0.5, 1.0))
        if pattern is MotionPattern.ROTATE:
            # at most max_speed cells per frame on the outer ring
            angular = float(rng.uniform(-1.0, 1.0) * max_speed / (span / 2.0))
            tracks.append(BlobTrack(center, sigma=sigma, amplitude=amplitude, angular=angular, pivot=pivot))
        else:
            velocity = (float(rng.uniform(-max_speed, max_speed)), float(rng.uniform(-max_speed, max_speed)))
            tracks.append(BlobTrack(center, velocity, sigma=sigma, amplitude=amplitude))
    return tracks


def synth_video_batch(
    seed: int,
    geom: LatentGeometry,
    batch: int,
    max_speed: float = 1.0,
    pattern: Union[MotionPattern, str] = MotionPattern.TRANSLATE,
    blobs: int = 2,
) -> Tuple[Tensor, Tensor]:
    """Moving-blob clips: inputs [batch x s x 8] and next-frame content targets [batch x s x 1]."""
    pattern = MotionPattern(pattern)
    rng = np.random.default_rng(seed)
    inputs, targets = [], []
    for _ in range(batch):
        tracks = random_tracks(rng, geom, blobs, max_speed, pattern)
        inputs.append(token_features(geom, render_field(geom, tracks)))
        targets.append(render_field(geom, tracks, time_offset=1.0).reshape(-1, 1).astype(np.float32))
    return Tensor.of(np.stack(inputs), DType.F32), Tensor.of(np.stack(targets), DType.F32)


# ==========================================
# TRAINING
# ==========================================

def _batch(config: ToyModelConfig, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    inputs, targets = synth_video_batch(seed, config.geometry, config.batch, config.max_speed, config.pattern)
    return np.asarray(inputs), np.asarray(targets)


def train(config: ToyModelConfig, validation_seed: Optional[int] = None) -> LossTrace:
    """Plain gradient descent on next-frame MSE; losses recorded before each update and after the last."""
    model = ToyModel.create(config)
    trace = LossTrace(config.label, config.geometry.seq_len)
    trace.set_layer_schemes(model.layer_schemes())
    logger.info("%s on %s: layer schemes %s", config.label, config.geometry.grid, " ".join(trace.layer_schemes))

    inputs, targets = _batch(config, config.seed)
    val_inputs, val_targets = _batch(config, config.seed + 1 if validation_seed is None else validation_seed)

    for step in range(config.steps + 1):
        start = time.perf_counter()
        if step < config.steps:
            loss, grads = model.loss_and_grads(inputs, targets)
        else:
            loss, grads = model.loss(inputs, targets), None
        wall_ms = (time.perf_counter() - start) * 1000.0

        if not np.isfinite(loss):
            trace.diverged = True
            raise DivergenceError(f"{config.label}: loss became {loss} at step {step}", trace)
        trace.record_step(step, loss, wall_ms)

        if step % config.eval_every == 0 or step == config.steps:
            trace.record_eval(step, model.loss(val_inputs, val_targets))
            logger.info("%s step %d: loss %.6f val %.6f", config.label, step, loss, trace.eval_losses[-1][1])

        if grads is not None:
            model.apply_gradients(grads, config.learning_rate)
            if not model.params_finite():
                trace.diverged = True
                raise DivergenceError(f"{config.label}: parameters became non-finite after step {step}", trace)
    return trace


def compare_losses(traces: Sequence[LossTrace]) -> ComparisonReport:
    """Every trace against the first: per-step ratio, final gap and area between the curves."""
    if len(traces) < 2:
        raise ValueError("compare_losses needs at least two traces")
    lengths = {len(trace) for trace in traces}
    if len(lengths) != 1:
        raise ValueError(f"Traces differ in length: {sorted(lengths)}")
    if lengths == {0}:
        raise ValueError("Traces are empty")

    labels: List[str] = []
    for i, trace in enumerate(traces):
        labels.append(trace.label if trace.label not in labels else f"{trace.label}#{i}")

    base = np.asarray(traces[0].losses)
    steps = np.asarray(traces[0].steps, dtype=np.float64)
    ratios, final_gap, area, final_loss = {}, {}, {}, {labels[0]: float(base[-1])}
    for label, trace in zip(labels[1:], traces[1:]):
        losses = np.asarray(trace.losses)
        gap = np.abs(losses - base)
        # 0 vs 0 counts as equal; any loss over a zero baseline is an unbounded ratio
        ratios[label] = np.divide(losses, base, out=np.where(losses == 0, 1.0, np.inf), where=base != 0)
        final_gap[label] = float(losses[-1] - base[-1])
        area[label] = float(np.sum((gap[1:] + gap[:-1]) / 2.0 * np.diff(steps)))
        final_loss[label] = float(losses[-1])

    return ComparisonReport(
        labels=tuple(labels),
        steps=tuple(int(s) for s in steps),
        ratios=ratios,
        final_gap=final_gap,
        area_between=area,
        final_loss=final_loss,
    )
