import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from vmoba.errors import ConfigError
from vmoba.partition.partition_api import parse_cycle, specs_by_scheme
from vmoba.partition.value_objects import LatentGeometry, PartitionSpec, Scheme
from vmoba.selection.value_objects import Rule, Scope, SelectionPolicy
from vmoba.toytrain.value_objects import AttentionMode, MotionPattern, ToyModelConfig

logger = logging.getLogger(__name__)

DEFAULT_BENCH_LENGTHS = [1024, 2048, 3072, 4096, 5120, 6144]
DEFAULT_TAU_GRID = [0.15, 0.25, 0.35, 0.5]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ==========================================
# CONFIG SECTIONS
# ==========================================

class GeometryConfig(_Model):
    frames: int = Field(ge=1)
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    hidden: int = Field(default=64, ge=1)
    heads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _heads_divide_hidden(self) -> "GeometryConfig":
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        return self

    def to_domain(self) -> LatentGeometry:
        return LatentGeometry(self.frames, self.height, self.width, self.hidden, self.heads)


class PartitionConfig(_Model):
    scheme: Literal["1d", "2d", "3d"]
    block: List[int]

    @model_validator(mode="after")
    def _valid_spec(self) -> "PartitionConfig":
        self.to_domain()
        return self

    def to_domain(self) -> PartitionSpec:
        return PartitionSpec(Scheme(self.scheme), tuple(self.block))


class SelectionConfig(_Model):
    scope: Literal["local", "global"] = "global"
    rule: Literal["topk", "threshold"] = "threshold"
    tau: Optional[float] = Field(default=0.25, gt=0.0, le=1.0)
    k: Optional[Union[int, Dict[Literal["1d", "2d", "3d"], int]]] = None
    scaled: bool = True
    include_self: bool = True

    @model_validator(mode="after")
    def _rule_parameters(self) -> "SelectionConfig":
        self.to_domain()
        return self

    def to_domain(self) -> SelectionPolicy:
        options = {"scaled": self.scaled, "include_self": self.include_self}
        if self.rule == "threshold":
            return SelectionPolicy(Scope(self.scope), Rule.THRESHOLD, tau=self.tau, **options)
        if isinstance(self.k, dict):
            per_scheme = tuple(sorted(((Scheme(s), k) for s, k in self.k.items()), key=lambda item: item[0].value))
            return SelectionPolicy(Scope(self.scope), Rule.TOPK, k_per_scheme=per_scheme, **options)
        return SelectionPolicy(Scope(self.scope), Rule.TOPK, k=self.k, **options)


class VerifyConfig(_Model):
    fixtures: int = Field(default=50, ge=1)
    grad_fixtures: int = Field(default=10, ge=1)
    grad_seq: int = Field(default=12, ge=2, le=16)
    max_seq: int = Field(default=2048, ge=8, le=2048)
    taus: List[float] = Field(default_factory=lambda: list(DEFAULT_TAU_GRID))

    @field_validator("taus")
    @classmethod
    def _taus_in_range(cls, taus: List[float]) -> List[float]:
        if not taus or any(not (0.0 < tau <= 1.0) for tau in taus):
            raise ValueError(f"every tau must lie in (0, 1], got {taus}")
        return sorted(taus)


class BenchConfig(_Model):
    frames: int = Field(default=4, ge=1)
    lengths: List[int] = Field(default_factory=lambda: list(DEFAULT_BENCH_LENGTHS))
    repeats: int = Field(default=5, ge=5)
    head_dim: int = Field(default=64, ge=1)
    aspect: float = Field(default=16 / 9, gt=0.0)

    @field_validator("lengths")
    @classmethod
    def _positive_lengths(cls, lengths: List[int]) -> List[int]:
        if not lengths or any(s < 1 for s in lengths):
            raise ValueError(f"benchmark lengths must be positive, got {lengths}")
        return lengths


class ToyConfig(_Model):
    layers: int = Field(default=3, ge=3)
    heads: int = Field(default=2, ge=1)
    hidden: int = Field(default=32, ge=1)
    geometry: List[int] = Field(default_factory=lambda: [8, 12, 16], min_length=3, max_length=3)
    long_geometry: Optional[List[int]] = Field(default=None, min_length=3, max_length=3)
    modes: List[Literal["full", "vmoba", "moba1d"]] = Field(default_factory=lambda: ["full", "vmoba", "moba1d"])
    tau: float = Field(default=0.25, gt=0.0, le=1.0)
    moba_k: int = Field(default=2, ge=1)
    steps: int = Field(default=300, ge=0)
    learning_rate: float = Field(default=0.05, gt=0.0)
    seed: int = 0
    batch: int = Field(default=1, ge=1)
    eval_every: int = Field(default=25, ge=1)
    pattern: Literal["translate", "rotate"] = "translate"
    max_speed: float = Field(default=1.0, ge=0.0)
    partitions: Optional[List[PartitionConfig]] = None
    cycle: str = "1-2-3d"
    path: Literal["masked", "gather", "streamed"] = "masked"

    @model_validator(mode="after")
    def _consistent(self) -> "ToyConfig":
        if not self.modes:
            raise ValueError("toy.modes must name at least one mode")
        for mode in self.modes:
            self.to_domain(mode)
        return self

    def to_domain(self, mode: str, workers: int = 1, long: bool = False) -> ToyModelConfig:
        grid = self.long_geometry if long else self.geometry
        if grid is None:
            raise ValueError("toy.long_geometry is not configured")
        options = {}
        if self.partitions is not None:
            options["specs"] = tuple(p.to_domain() for p in self.partitions)
        config = ToyModelConfig(
            layers=self.layers,
            heads=self.heads,
            hidden=self.hidden,
            geometry=LatentGeometry(*grid, hidden=self.hidden, heads=self.heads),
            mode=AttentionMode(mode),
            tau=self.tau,
            moba_k=self.moba_k,
            steps=self.steps,
            learning_rate=self.learning_rate,
            seed=self.seed,
            batch=self.batch,
            eval_every=self.eval_every,
            pattern=MotionPattern(self.pattern),
            max_speed=self.max_speed,
            cycle=parse_cycle(self.cycle),
            path=self.path,
            workers=workers,
            **options,
        )
        for spec in config.specs:
            spec.validate_for(config.geometry)
        return config


# ==========================================
# RUN CONFIG
# ==========================================

class RunConfig(_Model):
    geometry: GeometryConfig
    partitions: List[PartitionConfig]
    cycle: str = "1-2-3d"
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    seed: int = 0
    out_dir: str = "out"
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    toy: Optional[ToyConfig] = None

    @model_validator(mode="after")
    def _partitions_fit(self) -> "RunConfig":
        geom = self.geometry.to_domain()
        specs = specs_by_scheme(p.to_domain() for p in self.partitions)
        for scheme in parse_cycle(self.cycle):
            if scheme not in specs:
                raise ValueError(f"cycle '{self.cycle}' uses scheme {scheme.value} but no partition configures it")
        for spec in specs.values():
            spec.validate_for(geom)
        policy = self.selection.to_domain()
        for scheme in specs:
            policy.for_scheme(scheme)
        return self

    # domain views -------------------------------------------------------

    def latent_geometry(self) -> LatentGeometry:
        return self.geometry.to_domain()

    def partition_specs(self) -> Dict[Scheme, PartitionSpec]:
        return specs_by_scheme(p.to_domain() for p in self.partitions)

    def cycle_schemes(self) -> Tuple[Scheme, ...]:
        return parse_cycle(self.cycle)

    def policy(self) -> SelectionPolicy:
        return self.selection.to_domain()


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a JSON run config; a missing file raises FileNotFoundError."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
    logger.debug("loaded config %s: geometry %s, cycle %s", path, config.latent_geometry().grid, config.cycle)
    return config
