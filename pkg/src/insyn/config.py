"""Run configuration: one validated, hashable bundle of every knob."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from .interaction import DEFAULT_RADIUS
from .model import Ablation, LossWeights, ModelConfig
from .scene import DEFAULT_DT
from .training import TrainConfig

ABLATIONS = ("full", "wo-rp", "wo-is", "sos")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    radius: float = DEFAULT_RADIUS
    k: int = 20
    dt: float = DEFAULT_DT
    frame_stride: int = 1
    columns: Tuple[int, int, int, int] = (0, 1, 2, 3)
    augment: Tuple[str, ...] = ("rot", "scale")
    ablation: str = "full"
    jobs: int = 1
    lr_generator: float = 1e-4
    lr_cvae: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    clip_norm: Optional[float] = 1.0
    recon_weight: float = 1.0
    pred_weight: float = 1.0
    kl_weight: float = 5.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.columns = tuple(self.columns)
        self.augment = tuple(self.augment)
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if set(self.augment) - {"rot", "scale"}:
            raise ConfigError("augment accepts only 'rot' and 'scale'")
        if self.radius <= 0 or self.k < 1 or self.dt <= 0 or self.frame_stride < 1 or self.jobs < 1:
            raise ConfigError("radius, dt > 0; k, frame_stride, jobs >= 1")
        if len(self.columns) != 4:
            raise ConfigError("columns must list frame, id, x, y indices")
        try:
            self.train_config()
            LossWeights(self.recon_weight, self.pred_weight, self.kl_weight)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.model.seed = self.seed

    @property
    def ablation_flags(self) -> Ablation:
        return Ablation.named(self.ablation)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr_generator=self.lr_generator, lr_cvae=self.lr_cvae, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed,
                           weights=LossWeights(self.recon_weight, self.pred_weight, self.kl_weight),
                           ablation=self.ablation_flags, clip_norm=self.clip_norm)

    def to_dict(self) -> Dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["columns"] = list(self.columns)
        d["augment"] = list(self.augment)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def override(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def hash(self) -> str:
        return _digest(self.to_dict())

    @property
    def model_hash(self) -> str:
        """Identity of everything a checkpoint's weights depend on for inference."""
        arch = {k: v for k, v in self.model.to_dict().items() if k != "seed"}
        return _digest({"model": arch, "ablation": self.ablation, "radius": self.radius})


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(data)
