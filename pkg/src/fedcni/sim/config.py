"""Federation configuration: nested dataclasses loaded from JSON.

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..datagen import NOISE_TYPES
from ..errors import ConfigError
from ..solver import CADENCES, LossSpec, TrainHyper

METHODS = ("fedcni", "fedavg", "fedavg_clean")


@dataclass
class NoiseConfig:
    type: str = "symmetric"
    mu: float = 0.4
    sigma: float = 0.2


@dataclass
class DataConfig:
    num_classes: int = 10
    feature_dim: int = 20
    samples_per_class: int | list[int] = 500
    cluster_spread: float = 0.3125
    center_scale: float = 1.25
    num_clients: int = 20
    dirichlet_alpha: float = 0.7
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def class_counts(self) -> list[int]:
        if isinstance(self.samples_per_class, int):
            return [self.samples_per_class] * self.num_classes
        return list(self.samples_per_class)


@dataclass
class ModelConfig:
    hidden_width: int = 64


@dataclass
class TrainingConfig:
    rounds: int = 100
    epochs_per_round: int = 5
    batch_size: int = 100
    lr: float = 0.01
    momentum: float = 0.5
    warmup_rounds: int = 5


@dataclass
class FedCNIConfig:
    tau: float = 0.5
    lambda_sim: float = 0.7
    mixup_alpha: float = 1.0
    switch_round: int = 15
    temperature: float = 0.05
    detection_cadence: str = "round"
    carry_labels: bool = False
    min_class_size: int = 2
    enable_denoise_mixup: bool = True
    enable_sim_loss: bool = True
    enable_curriculum: bool = True
    enable_switching_aggregation: bool = True


@dataclass
class FederationConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    fedcni: FedCNIConfig = field(default_factory=FedCNIConfig)
    method: str = "fedcni"
    seed: int = 0

    def validate(self) -> "FederationConfig":
        d, t, f = self.data, self.training, self.fedcni
        checks = [
            (d.num_classes >= 2, "data.num_classes must be >= 2"),
            (d.feature_dim >= d.num_classes, "data.feature_dim must be >= data.num_classes"),
            (len(d.class_counts()) == d.num_classes, "data.samples_per_class needs one entry per class"),
            (all(n >= 2 for n in d.class_counts()), "data.samples_per_class entries must be >= 2"),
            (d.cluster_spread > 0, "data.cluster_spread must be positive"),
            (d.center_scale > 0, "data.center_scale must be positive"),
            (d.num_clients >= 1, "data.num_clients must be >= 1"),
            (d.dirichlet_alpha > 0, "data.dirichlet_alpha must be positive"),
            (d.noise.type in NOISE_TYPES, f"data.noise.type must be one of {NOISE_TYPES}"),
            (d.noise.sigma > 0, "data.noise.sigma must be positive"),
            (-1.0 < d.noise.mu < 2.0, "data.noise.mu must lie inside (-1, 2)"),
            (self.model.hidden_width >= 1, "model.hidden_width must be >= 1"),
            (t.rounds >= 0, "training.rounds must be >= 0"),
            (t.epochs_per_round >= 0, "training.epochs_per_round must be >= 0"),
            (t.batch_size >= 1, "training.batch_size must be >= 1"),
            (t.lr > 0, "training.lr must be positive"),
            (0 <= t.momentum < 1, "training.momentum must lie in [0, 1)"),
            (t.warmup_rounds >= 0, "training.warmup_rounds must be >= 0"),
            (0 < f.tau <= 1, "fedcni.tau must lie in (0, 1]"),
            (f.lambda_sim >= 0, "fedcni.lambda_sim must be >= 0"),
            (f.mixup_alpha > 0, "fedcni.mixup_alpha must be positive"),
            (f.switch_round >= 0, "fedcni.switch_round must be >= 0"),
            (f.temperature > 0, "fedcni.temperature must be positive"),
            (f.detection_cadence in CADENCES, f"fedcni.detection_cadence must be one of {CADENCES}"),
            (f.min_class_size >= 1, "fedcni.min_class_size must be >= 1"),
            (self.method in METHODS, f"method must be one of {METHODS}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def loss_spec(self) -> LossSpec:
        f = self.fedcni
        return LossSpec(f.lambda_sim, f.mixup_alpha, f.enable_denoise_mixup, f.enable_sim_loss,
                        f.enable_curriculum, f.temperature, f.detection_cadence, f.min_class_size)

    def train_hyper(self) -> TrainHyper:
        t = self.training
        return TrainHyper(t.epochs_per_round, t.batch_size, t.lr, t.momentum)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "FederationConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"training.rounds": 3})``."""
        doc = self.to_dict()
        for path, value in changes.items():
            node = doc
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {path!r}")
            node[leaf] = value
        return from_dict(doc)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        sub = type(default()) if default is not None else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def from_dict(doc: dict) -> FederationConfig:
    cfg = _build(FederationConfig, doc, "")
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"ill-typed config value: {exc}") from exc


def load_config(path) -> FederationConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(doc)


def desk_scale(seed: int = 0, method: str = "fedcni") -> FederationConfig:
    """10-class blobs, d=20, 4000 training samples, 20 clients, 50 rounds."""
    cfg = FederationConfig(method=method, seed=seed)
    cfg.training.rounds = 50
    return cfg.validate()
