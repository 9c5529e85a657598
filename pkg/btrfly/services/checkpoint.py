# btrfly/services/checkpoint.py
import hashlib
import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from btrfly.core.config import settings
from btrfly.core.exceptions import FormatError
from btrfly.models.adversaries import EnergyDiscriminator, WassersteinDiscriminator
from btrfly.models.btrfly import BtrflyNet
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.schemas.network import BtrflyConfig, EBDConfig, LocalizerConfig, WDConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

Discriminator = Union[EnergyDiscriminator, WassersteinDiscriminator]


class NetworkKind(str, Enum):
    LABELLER = "labeller"
    LOCALIZER = "localizer"


class Checkpoint(BaseModel):
    """A loaded archive: the network plus whatever the training run stored beside it"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: NetworkKind
    model: nn.Module
    discriminators: dict[str, nn.Module] = Field(default_factory=dict)
    iteration: Optional[int] = None
    train_config: Optional[str] = Field(None, description="TrainConfig JSON snapshot")


def _discriminator_entry(discriminator: Discriminator) -> dict:
    family = "ebd" if isinstance(discriminator, EnergyDiscriminator) else "wd"
    return {
        "family": family,
        "config": discriminator.config.model_dump_json(),
        "state_dict": discriminator.state_dict(),
    }


def _build_discriminator(entry: dict) -> Discriminator:
    if entry["family"] == "ebd":
        discriminator = EnergyDiscriminator(EBDConfig.model_validate_json(entry["config"]))
    elif entry["family"] == "wd":
        discriminator = WassersteinDiscriminator(WDConfig.model_validate_json(entry["config"]))
    else:
        raise FormatError(f"unknown discriminator family {entry['family']!r}")
    discriminator.load_state_dict(entry["state_dict"])
    return discriminator


def save_checkpoint(
    path: Path,
    model: Union[BtrflyNet, SpineLocalizerNet],
    discriminators: Optional[dict[str, Discriminator]] = None,
    iteration: Optional[int] = None,
    train_config: Optional[BaseModel] = None,
) -> Path:
    """
    Writes weights and network config as one archive.

    Training checkpoints pass the per-view discriminators; inference bundles do not.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = NetworkKind.LOCALIZER if isinstance(model, SpineLocalizerNet) else NetworkKind.LABELLER
    archive = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind.value,
        "config": model.config.model_dump_json(),
        "state_dict": model.state_dict(),
        "discriminators": {view: _discriminator_entry(d) for view, d in (discriminators or {}).items()},
        "iteration": iteration,
        "train_config": train_config.model_dump_json() if train_config is not None else None,
    }
    torch.save(archive, path)
    logger.info("Saved %s checkpoint to %s", kind.value, path)
    return path


def load_checkpoint(path: Path, map_location: Union[str, torch.device] = "cpu") -> Checkpoint:
    """
    Raises:
        FormatError: unreadable archive or unsupported schema version
    """
    path = Path(path)
    try:
        archive = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(archive, dict) or archive.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path} is not a version-{SCHEMA_VERSION} checkpoint")

    kind = NetworkKind(archive["kind"])
    if kind is NetworkKind.LOCALIZER:
        model: nn.Module = SpineLocalizerNet(LocalizerConfig.model_validate_json(archive["config"]))
    else:
        model = BtrflyNet(BtrflyConfig.model_validate_json(archive["config"]))
    model.load_state_dict(archive["state_dict"])
    model.eval()
    return Checkpoint(
        kind=kind,
        model=model,
        discriminators={view: _build_discriminator(e) for view, e in archive["discriminators"].items()},
        iteration=archive.get("iteration"),
        train_config=archive.get("train_config"),
    )


def load_model(path: Path, kind: NetworkKind, map_location: Union[str, torch.device] = "cpu") -> nn.Module:
    checkpoint = load_checkpoint(path, map_location)
    if checkpoint.kind is not kind:
        raise FormatError(f"{path} holds a {checkpoint.kind.value}, expected a {kind.value}")
    return checkpoint.model


def export_inference_bundle(source: Path, target: Path) -> Path:
    """Re-saves a training checkpoint without its discriminators"""
    checkpoint = load_checkpoint(source)
    return save_checkpoint(target, checkpoint.model, iteration=checkpoint.iteration)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def resolve_device(name: Optional[str] = None) -> torch.device:
    """`auto` picks CUDA when available"""
    name = name or settings.DEVICE
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)
