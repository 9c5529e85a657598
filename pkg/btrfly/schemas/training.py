from enum import Enum
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, Field, model_validator

from btrfly.schemas.network import BtrflyConfig, EBDConfig, LocalizerConfig, WDConfig


class TrainMode(str, Enum):
    PLAIN = "plain"
    PE_EB = "pe_eb"
    PE_W = "pe_w"


class AugmentationConfig(BaseModel):
    """On-the-fly geometric augmentation ranges"""
    enabled: bool = True
    translate_px: float = Field(10.0, ge=0.0)
    rotate_deg: float = Field(5.0, ge=0.0)
    scale_min: float = Field(0.8, gt=0.0)
    scale_max: float = Field(1.2, gt=0.0)

    @model_validator(mode="after")
    def _ordered_scale(self) -> "AugmentationConfig":
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        return self


class ScheduleConfig(BaseModel):
    """Step-decayed Adam learning rate"""
    total_iters: int = Field(80000, ge=1)
    lr0: float = Field(1e-3, gt=0.0)
    lr_decay: float = Field(0.75, gt=0.0, le=1.0)
    lr_decay_every: int = Field(10000, ge=1)
    lr_floor: float = Field(0.2e-3, ge=0.0)
    adam_betas: tuple[float, float] = (0.9, 0.999)


class TrainConfig(ScheduleConfig):
    """Schema for labeller training (plain, energy-based or Wasserstein prior encoding)"""
    mode: TrainMode = TrainMode.PLAIN
    batch_size: int = Field(4, ge=1)
    seed: int = 0
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    d_updates_per_g: int = Field(1, ge=1)
    adversarial_weight: float = Field(1.0, ge=0.0)
    model: BtrflyConfig = Field(default_factory=BtrflyConfig)
    ebd: EBDConfig = Field(default_factory=EBDConfig)
    wd: WDConfig = Field(default_factory=WDConfig)
    val_every: int = Field(1000, ge=1)
    checkpoint_every: int = Field(10000, ge=1)
    log_every: int = Field(100, ge=1)
    num_workers: int = Field(0, ge=0)
    prefetch_batches: int = Field(2, ge=1, description="Bounded loader queue depth per worker")
    deterministic: bool = True
    device: Optional[str] = None


class LocalizerTrainConfig(ScheduleConfig):
    """Schema for spine localizer training"""
    total_iters: int = Field(20000, ge=1)
    seed: int = 0
    resolution_mm: float = Field(4.0, gt=0.0)
    sigma_mm: float = Field(15.0, gt=0.0)
    model: LocalizerConfig = Field(default_factory=LocalizerConfig)
    checkpoint_every: int = Field(5000, ge=1)
    log_every: int = Field(100, ge=1)
    deterministic: bool = True
    device: Optional[str] = None


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _deep_update(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(
    model_cls: Type[ConfigT],
    path: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ConfigT:
    """
    Builds a config from an optional YAML file plus overrides.

    Overrides win over file values; `None` overrides are ignored so unset
    CLI flags do not mask the file.
    """
    data: dict[str, Any] = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
    clean = {key: value for key, value in (overrides or {}).items() if value is not None}
    return model_cls.model_validate(_deep_update(data, clean))
