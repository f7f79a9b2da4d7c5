"""Run configuration: stage budgets, sampling settings, seeds and the ablation switch."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..dualflow import MODES, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    steps: int = 300
    lr: float = 1e-3
    warmup: int = 100
    batch: int = 8
    accumulate: int = 1
    weight_decay: float = 3e-2
    max_grad_norm: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999

    def validate(self, name: str, allow_zero: bool = True):
        if self.steps < 0 or (self.steps == 0 and not allow_zero):
            raise ConfigError(f"{name}: steps must be positive")
        if self.batch < 1 or self.accumulate < 1 or self.accumulate > self.batch:
            raise ConfigError(f"{name}: need 1 <= accumulate <= batch")
        if self.lr <= 0:
            raise ConfigError(f"{name}: lr must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    stage0: StageConfig = field(default_factory=StageConfig)
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(default_factory=lambda: StageConfig(steps=600))
    layer_count: int = 3
    cfg_scale: float = 6.0
    sample_steps: int = 50
    cond_dropout: float = 0.1
    seed: int = 0
    n_train: int = 512
    n_heldout: int = 64
    eval_records: int = 64
    eval_batch: int = 16
    ablation_steps: int = 50
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in MODES:
            raise ConfigError(f"ablation must be one of {MODES}, got {self.ablation!r}")
        if self.model.mode != self.ablation:
            object.__setattr__(self, "model", replace(self.model, mode=self.ablation))
        for name in ("stage0", "stage1", "stage2"):
            getattr(self, name).validate(name)
        if not 1 <= self.layer_count <= self.model.depth:
            raise ConfigError("layer_count must lie in [1, depth]")
        if self.sample_steps < 1:
            raise ConfigError("sample_steps must be >= 1")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigError("cond_dropout must lie in [0, 1)")

    def stage(self, k: int) -> StageConfig:
        return (self.stage0, self.stage1, self.stage2)[k]

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "model" in kw:
                kw["model"] = ModelConfig.from_dict(kw["model"])
            for s in ("stage0", "stage1", "stage2"):
                if s in kw:
                    kw[s] = StageConfig(**kw[s])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def desk_config(**overrides) -> RunConfig:
    """The acceptance-scale defaults (stage budgets 300/300/600, batch 8)."""
    return replace(RunConfig(), **overrides)
