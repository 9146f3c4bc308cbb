"""Run configuration: nested dataclasses, strict JSON loading and hashing."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from src.constants import (
    DEFAULT_ADAM_BETAS,
    DEFAULT_APERTURE_CM,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CARRIER_GHZ,
    DEFAULT_DELTA,
    DEFAULT_DROPOUT,
    DEFAULT_GRID,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOSS_BETA,
    DEFAULT_M_T,
    DEFAULT_OBSERVED_COUNTS,
    DEFAULT_PERTURB_GAMMA,
    DEFAULT_PERTURB_MU,
    DEFAULT_SENTINEL,
    DEFAULT_SNRS_DB,
    DEFAULT_WEIGHT_DECAY,
    MASK_RATIO_BAND,
    SEED_ENV_VAR,
)
from src.errors import ConfigError
from src.models import PortGrid
from src.utils import stable_hash


@dataclass(frozen=True)
class DatasetConfig:
    train: int = 8
    val: int = 2
    test: int = 2
    total: int | None = None
    n_y: int = DEFAULT_GRID[0]
    n_x: int = DEFAULT_GRID[1]
    w_x_cm: float = DEFAULT_APERTURE_CM[0]
    w_y_cm: float = DEFAULT_APERTURE_CM[1]
    freq_ghz: float = DEFAULT_CARRIER_GHZ
    m_t: int = DEFAULT_M_T
    delta: float = DEFAULT_DELTA
    master_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train", "val", "test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"dataset.{name}: split size must be nonnegative")
        if self.train + self.val + self.test == 0:
            raise ConfigError("dataset: all splits are empty")
        if self.total is not None and self.train + self.val + self.test > self.total:
            raise ConfigError(
                f"dataset: split sizes {self.train}+{self.val}+{self.test} exceed total {self.total}"
            )
        if self.m_t < 1:
            raise ConfigError(f"dataset.m_t must be >= 1, got {self.m_t}")
        if self.master_seed < 0:
            raise ConfigError("dataset.master_seed must be nonnegative")

    def grid(self) -> PortGrid:
        return PortGrid.from_carrier(
            self.n_y, self.n_x, self.w_x_cm, self.w_y_cm, self.freq_ghz
        )

    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass(frozen=True)
class ModelConfig:
    flag_channel: bool = True
    dropout: float = DEFAULT_DROPOUT
    width_divisor: int = 1
    convnext_depth: int = 10
    csca_patch: int = 3
    csca_softmax_scale: float = 1.0
    csca_flag_rule: Literal["nearest", "maxpool"] = "nearest"

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")
        if self.width_divisor < 1:
            raise ConfigError("model.width_divisor must be >= 1")
        if self.csca_flag_rule not in ("nearest", "maxpool"):
            raise ConfigError(f"model.csca_flag_rule: unknown rule {self.csca_flag_rule!r}")


@dataclass(frozen=True)
class PerturbConfig:
    """Spatial amplitude perturbation settings (γ strength, μ Bernoulli rate)."""

    gamma: float = DEFAULT_PERTURB_GAMMA
    mu: float = DEFAULT_PERTURB_MU
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ConfigError(f"perturb.gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"perturb.mu must be in [0, 1], got {self.mu}")


@dataclass(frozen=True)
class OptimConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    betas: tuple[float, float] = DEFAULT_ADAM_BETAS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    loss_beta: float = DEFAULT_LOSS_BETA
    epochs: int = 10
    lr_schedule: Literal["constant", "cosine"] = "constant"
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("optim.learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("optim.epochs must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"optim.lr_schedule: unknown schedule {self.lr_schedule!r}")


@dataclass(frozen=True)
class TrainConfig:
    ablation: Literal["full", "canet-b"] = "full"
    snrs_db: tuple[float, ...] = DEFAULT_SNRS_DB
    mask_ratio_band: tuple[float, float] = MASK_RATIO_BAND
    sentinel: float = DEFAULT_SENTINEL
    seed: int = 0
    workers: int = 0
    device: Literal["cpu", "cuda", "auto"] = "cpu"
    log_every: int = 1

    def __post_init__(self) -> None:
        if self.ablation not in ("full", "canet-b"):
            raise ConfigError(f"train.ablation: expected full or canet-b, got {self.ablation!r}")
        if not self.snrs_db:
            raise ConfigError("train.snrs_db must not be empty")
        low, high = self.mask_ratio_band
        if not 0.0 <= low <= high < 1.0:
            raise ConfigError(f"train.mask_ratio_band must satisfy 0 <= low <= high < 1, got {self.mask_ratio_band}")
        if self.device not in ("cpu", "cuda", "auto"):
            raise ConfigError(f"train.device: unknown device {self.device!r}")


@dataclass(frozen=True)
class EvalConfig:
    observed_counts: tuple[int, ...] = DEFAULT_OBSERVED_COUNTS
    snrs_db: tuple[float, ...] = DEFAULT_SNRS_DB
    seed: int = 1234
    noise_placement: Literal["input", "target", "both"] = "input"
    overwrite_observed: bool = False
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.noise_placement not in ("input", "target", "both"):
            raise ConfigError(f"eval.noise_placement: unknown value {self.noise_placement!r}")
        if any(count < 1 for count in self.observed_counts):
            raise ConfigError("eval.observed_counts must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def is_ablation(self) -> bool:
        return self.train.ablation == "canet-b"

    @property
    def effective_beta(self) -> float:
        """FFT loss weight actually used; CANet-B trains on MSE alone."""
        return 0.0 if self.is_ablation else self.optim.loss_beta

    @property
    def perturb_active(self) -> bool:
        return self.perturb.enabled and not self.is_ablation

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, section: str, **changes: Any) -> RunConfig:
        """Copy with fields of one section replaced."""
        current = getattr(self, section)
        try:
            updated = dataclasses.replace(current, **changes)
        except TypeError as exc:
            raise ConfigError(f"{section}: {exc}") from exc
        return dataclasses.replace(self, **{section: updated})


def config_hash(config: RunConfig) -> str:
    return stable_hash(config.to_dict())


def _coerce(value: Any, annotation: Any, path: str) -> Any:
    """Check ``value`` against a field annotation, converting lists to tuples."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if dataclasses.is_dataclass(annotation):
        return _build_section(annotation, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [arg for arg in args if arg is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is Literal:
        if value not in args:
            raise ConfigError(f"{path}: expected one of {list(args)}, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(item, args[0], f"{path}[{i}]") for i, item in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(item, arg, f"{path}[{i}]") for i, (item, arg) in enumerate(zip(value, args)))
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _build_section(cls: type, raw: Any, path: str) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key: {where}{unknown[0]}")
    kwargs = {
        name: _coerce(value, hints[name], f"{path}.{name}" if path else name)
        for name, value in raw.items()
    }
    return cls(**kwargs)


def run_config_from_dict(raw: dict[str, Any]) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys with their dotted path."""
    return _build_section(RunConfig, raw, "")


def load_run_config(path: Path) -> RunConfig:
    try:
        with path.open("r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        logging.exception("Failed to read run config from %s", path)
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return apply_env_overrides(run_config_from_dict(raw))


def save_run_config(config: RunConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, indent=2, sort_keys=True)


def apply_env_overrides(
    config: RunConfig, target: Literal["train", "dataset"] = "train"
) -> RunConfig:
    """Honour FAS_CANET_SEED: replaces train.seed, or dataset.master_seed for gen."""
    raw_seed = os.environ.get(SEED_ENV_VAR)
    if raw_seed is None or not raw_seed.strip():
        return config
    try:
        seed = int(raw_seed)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw_seed!r}") from exc
    logging.info("Seed overridden by %s=%d", SEED_ENV_VAR, seed)
    if target == "dataset":
        return config.replace("dataset", master_seed=seed)
    return config.replace("train", seed=seed)
