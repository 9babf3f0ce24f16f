from .value_objects import AttentionMode, BlobTrack, ComparisonReport, MotionPattern, ToyModelConfig
from .entities import LossTrace
from .aggregate_root import ToyModel, build_attention
from .toytrain_api import (
    FEATURE_NAMES,
    compare_losses,
    position_features,
    random_tracks,
    render_field,
    synth_video_batch,
    token_features,
    train,
)

__all__ = [
    "AttentionMode",
    "BlobTrack",
    "ComparisonReport",
    "MotionPattern",
    "ToyModelConfig",
    "LossTrace",
    "ToyModel",
    "build_attention",
    "FEATURE_NAMES",
    "compare_losses",
    "position_features",
    "random_tracks",
    "render_field",
    "synth_video_batch",
    "token_features",
    "train",
]
