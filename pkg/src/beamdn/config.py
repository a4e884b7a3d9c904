"""Run configuration: one JSON document with a schema version; unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .beta import BetaParams
from .evaluation import EvalConfig
from .raydn import RaySpec
from .scenes import DEFAULT_RANGE, PLACEMENT_RANGE
from .toynet.losses import BOX_CODE
from .toynet.model import DecoderConfig
from .toynet.train import TrainConfig

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RaySettings:
    lam: float = 8.0
    mu: float = 2.0
    radius_k: float = 3.0
    n_per_ray: int = 5

    def spec(self) -> RaySpec:
        return RaySpec(BetaParams(self.lam, self.mu), self.radius_k, self.n_per_ray)


@dataclass(frozen=True)
class DecoderSettings:
    embed_dim: int = 32
    n_heads: int = 2
    n_layers: int = 2
    n_obj_queries: int = 24
    hidden_dim: int = 64
    perception_range: tuple = DEFAULT_RANGE
    n_classes: int = 3
    view_origin: tuple = (0.0, 0.0, 1.6)

    def build(self) -> DecoderConfig:
        return DecoderConfig(**asdict(self))


@dataclass(frozen=True)
class SceneSettings:
    n_cameras: int = 6
    max_boxes: int = 8
    colinear_fraction: float = 0.3
    placement_range: tuple = PLACEMENT_RANGE
    grid_w: int = 16
    grid_h: int = 12


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 1500
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    denoise_weight: float = 1.0
    l1_weight: float = 0.25
    match_l1_weight: float = 2.0
    box_code: tuple = BOX_CODE

    def build(self) -> TrainConfig:
        return TrainConfig(**asdict(self))


@dataclass(frozen=True)
class EvalSettings:
    distance_thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    ray_angle_eps: float = 0.01
    recall_points: int = 101
    score_floor: float = 0.05

    def build(self) -> EvalConfig:
        return EvalConfig(self.distance_thresholds, self.ray_angle_eps, self.recall_points)


@dataclass(frozen=True)
class PathSettings:
    scenes: str = "scenes"
    model: str = "model.bin"
    report: str = "report"


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = CONFIG_SCHEMA
    seed: int = 0
    ray: RaySettings = field(default_factory=RaySettings)
    decoder: DecoderSettings = field(default_factory=DecoderSettings)
    scenes: SceneSettings = field(default_factory=SceneSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return from_dict({**self.to_dict(), "seed": int(seed)})


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(float(v) for v in value)
        elif isinstance(current, bool) or not isinstance(current, (int, float, str)):
            kwargs[name] = value
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            kwargs[name] = value
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
            kwargs[name] = float(value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{path}: expected a string, got {value!r}")
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    version = data.get("schema_version", CONFIG_SCHEMA)
    if version != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    cfg = _build(RunConfig, data, "")
    # fail early on values the owning modules reject
    try:
        cfg.ray.spec()
        cfg.decoder.build()
        cfg.eval.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)
