"""Experiment configuration: a flat-ish JSON document mirroring ``ExperimentConfig``."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class DatasetConfig:
    name: str = "cifar10"
    path: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None


@dataclass
class ExperimentConfig:
    g_selective: int = 4
    g_nonselective: int = 4
    group_length: int = 128
    image_height: int = 32
    image_width: int = 32
    source_channels: int = 64
    alpha: float = 5e-4
    stage_epochs: list[int] = field(default_factory=lambda: [150, 150, 100])
    stage_lrs: list[float] = field(default_factory=lambda: [5e-4, 5e-5, 5e-5])
    batch_size: int = 128
    tau_init: float = 5.0
    tau_decay: float = 0.015
    tau_min: float = 0.1
    # optional epochs at the start of stage 1 that draw uniformly random masks
    # and leave the policy untouched; off by default
    policy_warmup_epochs: int = 0
    snr_min: float = 0.0
    snr_max: float = 20.0
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval_snrs: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    eval_subset: int = 1000
    # None trains the adaptive model; an integer j trains a fixed-rate baseline
    fixed_groups: int | None = None

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = _build(DatasetConfig, self.dataset, "dataset")
        self.stage_epochs = [int(e) for e in self.stage_epochs]
        self.stage_lrs = [float(v) for v in self.stage_lrs]
        self.eval_snrs = [float(s) for s in self.eval_snrs]
        self.validate()

    def validate(self) -> None:
        counts = dict(
            g_selective=self.g_selective,
            group_length=self.group_length,
            image_height=self.image_height,
            image_width=self.image_width,
            source_channels=self.source_channels,
            batch_size=self.batch_size,
        )
        for name, value in counts.items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.g_nonselective < 0:
            raise ConfigError("g_nonselective must be non-negative")
        if self.group_length % 2:
            raise ConfigError("group_length must be even")
        if self.image_height % 4 or self.image_width % 4:
            raise ConfigError("image dimensions must be divisible by 4")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not self.snr_min < self.snr_max:
            raise ConfigError("SNR training range is empty")
        if len(self.stage_epochs) != 3 or len(self.stage_lrs) != 3:
            raise ConfigError("stage_epochs and stage_lrs need one entry per stage (3)")
        if any(e < 0 for e in self.stage_epochs) or any(v <= 0 for v in self.stage_lrs):
            raise ConfigError("stage epochs must be >= 0 and learning rates > 0")
        if self.policy_warmup_epochs < 0:
            raise ConfigError("policy_warmup_epochs must be non-negative")
        if not (self.tau_init > 0 and self.tau_min > 0 and self.tau_decay >= 0):
            raise ConfigError("temperature parameters must be positive")
        if self.fixed_groups is not None and not 0 <= self.fixed_groups <= self.g_selective:
            raise ConfigError(f"fixed_groups must lie in [0, {self.g_selective}]")
        if self.g_nonselective == 0 and self.fixed_groups == 0:
            raise ConfigError("a frame needs at least one active group")
        spatial = (self.image_height // 4) * (self.image_width // 4)
        if (self.g_selective + self.g_nonselective) * self.group_length % spatial:
            raise ConfigError("groups x group_length must be a multiple of the 8x8-class feature map size")

    @property
    def n_groups(self) -> int:
        return self.g_selective + self.g_nonselective

    @property
    def total_epochs(self) -> int:
        return sum(self.stage_epochs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def full_scale_config(**changes) -> ExperimentConfig:
    return ExperimentConfig(**changes)


def desk_config(**changes) -> ExperimentConfig:
    """Compressed schedule used by the acceptance experiments."""
    base = dict(
        stage_epochs=[30, 30, 20],
        dataset=DatasetConfig(name="synthetic", train_subset=5000, test_subset=1000),
    )
    base.update(changes)
    return ExperimentConfig(**base)
