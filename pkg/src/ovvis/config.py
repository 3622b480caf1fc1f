"""Experiment configuration: defaults < config file < command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

SCHEMES = ("online", "offline", "semi_online")


@dataclass
class WorldConfig:
    num_categories: int = 12
    embed_dim: int = 16
    height: int = 32
    width: int = 32
    frames_per_video: int = 10
    min_instances: int = 1
    max_instances: int = 1
    min_size: int = 8
    max_size: int = 14
    motion_speed: float = 1.0
    noise_sigma: float = 0.05
    base_ratio: float = 2 / 3
    domain_gap: str = "hidden_rotation"
    occlusion: bool = False
    foreground_channel: bool = True
    num_train_videos: int = 32
    num_eval_videos: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.domain_gap not in ("identity", "hidden_rotation"):
            raise ConfigError(f"domain_gap must be identity|hidden_rotation, got {self.domain_gap!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.embed_dim < self.num_categories:
            raise ConfigError("embed_dim must be >= num_categories (orthonormal prototypes)")
        if not 0 < self.num_base <= self.num_categories:
            raise ConfigError("base_ratio leaves no base categories")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ConfigError("need 1 <= min_instances <= max_instances")
        if not 1 <= self.min_size <= self.max_size <= min(self.height, self.width):
            raise ConfigError("instance size range does not fit the grid")
        if self.frames_per_video < 1:
            raise ConfigError("frames_per_video must be >= 1")

    @property
    def input_channels(self) -> int:
        return self.embed_dim + int(self.foreground_channel)

    @property
    def num_base(self) -> int:
        return int(round(self.num_categories * self.base_ratio))

    @property
    def num_novel(self) -> int:
        return self.num_categories - self.num_base


@dataclass
class ModelConfig:
    num_queries: int = 20
    hidden_dim: int = 64
    num_layers: int = 3
    num_heads: int = 1
    uea_heads: int = 1
    dim_feedforward: int = 128
    stride: int = 4
    activation: str = "relu"
    uea_enabled: bool = True
    normalize_cls_embeddings: bool = False
    all_class_bce: bool = False
    logit_scale: float = 1.0
    query_init_std: float = 0.02

    def __post_init__(self):
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"activation must be relu|gelu, got {self.activation!r}")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ConfigError("stride must be a power of two")
        if self.hidden_dim % 4:
            raise ConfigError("hidden_dim must be divisible by 4 (positional encoding)")
        if self.hidden_dim % self.num_heads:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if self.num_queries < 1 or self.num_layers < 0:
            raise ConfigError("num_queries >= 1 and num_layers >= 0 required")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_ins: float = 2.0
    lambda_cls: float = 2.0
    lambda_mask: float = 5.0
    clip_frames: int = 2
    decay_fractions: tuple = (0.9, 0.95)
    decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.decay_fractions = tuple(self.decay_fractions)
        if self.steps < 0 or self.batch < 1 or self.clip_frames < 1:
            raise ConfigError("steps >= 0, batch >= 1, clip_frames >= 1 required")
        if min(self.lambda_ins, self.lambda_cls, self.lambda_mask) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass
class InferConfig:
    scheme: str = "semi_online"
    clip_len: int = 5
    keep_threshold: float = 0.3
    new_track_threshold: float = 0.2
    patience: int = 1
    query_update: str = "overwrite"
    ema_momentum: float = 0.5

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.clip_len < 1:
            raise ConfigError("clip_len must be >= 1")
        if self.query_update not in ("overwrite", "ema"):
            raise ConfigError("query_update must be overwrite|ema")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["decay_fractions"] = list(self.train.decay_fractions)
        return d

    def echo(self) -> dict:
        """The config as embedded in outputs; the output location is left out so
        identical experiments written to different directories match byte for byte."""
        d = self.to_dict()
        del d["out_dir"]
        return d

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        sections = {"world": WorldConfig, "model": ModelConfig,
                    "train": TrainConfig, "infer": InferConfig}
        unknown = set(data) - set(sections) - {"out_dir"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, klass in sections.items():
            kwargs[name] = _build(klass, data.get(name) or {}, name)
        if "out_dir" in data:
            kwargs["out_dir"] = str(data["out_dir"])
        return cls(**kwargs)

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. replace(**{"model.uea_enabled": False})."""
        d = self.to_dict()
        for key, value in overrides.items():
            set_dotted(d, key, value)
        return ExperimentConfig.from_dict(d)


def _build(klass, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(klass)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    values = {k: _coerce(v, fields[k].type, f"{section}.{k}") for k, v in values.items()}
    try:
        return klass(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _coerce(value, annotation, key: str):
    """YAML reads '1e-4' as a string; numeric fields accept such spellings."""
    if annotation == "float" and isinstance(value, (str, int)) and not isinstance(value, bool):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if annotation == "int" and isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    return value


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {raw!r}") from exc
    return key.strip(), value


def load_config(path=None, overrides=(), seed: int | None = None, out_dir=None) -> ExperimentConfig:
    data: dict = ExperimentConfig().to_dict()
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(data.get(section), dict):
                for k, v in values.items():
                    set_dotted(data, f"{section}.{k}", v)
            elif section in data:
                data[section] = values
            else:
                raise ConfigError(f"unknown config section {section!r}")
    for text in overrides:
        key, value = parse_override(text)
        set_dotted(data, key, value)
    if seed is not None:
        data["world"]["seed"] = int(seed)
        data["train"]["seed"] = int(seed)
    if out_dir is not None:
        data["out_dir"] = str(out_dir)
    return ExperimentConfig.from_dict(data)
