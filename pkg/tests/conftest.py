from pathlib import Path

import numpy as np
import pytest
import torch

from btrfly.core.taxonomy import VertebraLabel
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import FovPolicy, PhantomSpec
from btrfly.schemas.network import BtrflyConfig, EBDConfig, LocalizerConfig, WDConfig
from btrfly.schemas.training import AugmentationConfig, TrainConfig
from btrfly.schemas.volume import Volume
from btrfly.services.dataset import PrepareOptions, prepare_dataset
from btrfly.services.phantom import generate_dataset, generate_phantom


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> PhantomSpec:
    return PhantomSpec(
        n_vertebrae=3,
        start_label=VertebraLabel.L1,
        spacing_mm=16.0,
        noise_sd=0.0,
        resolution_mm=4.0,
        lateral_fov_mm=64.0,
        seed=3,
    )


@pytest.fixture
def small_phantom(small_spec) -> tuple[Volume, AnnotationSet]:
    return generate_phantom(small_spec)


@pytest.fixture
def tiny_btrfly_config() -> BtrflyConfig:
    return BtrflyConfig(base_filters=4, bottleneck_channels=16)


@pytest.fixture
def tiny_ebd_config() -> EBDConfig:
    return EBDConfig(base_channels=2)


@pytest.fixture
def tiny_wd_config() -> WDConfig:
    return WDConfig(base_channels=2, strided_stages=2)


@pytest.fixture
def tiny_localizer_config() -> LocalizerConfig:
    return LocalizerConfig(base_filters=2, depth=2)


@pytest.fixture
def tiny_train_config(tiny_btrfly_config, tiny_ebd_config, tiny_wd_config) -> TrainConfig:
    return TrainConfig(
        total_iters=3,
        batch_size=2,
        seed=5,
        model=tiny_btrfly_config,
        ebd=tiny_ebd_config,
        wd=tiny_wd_config,
        val_every=2,
        checkpoint_every=2,
        log_every=1,
        augmentation=AugmentationConfig(enabled=True),
        device="cpu",
    )


@pytest.fixture(scope="session")
def phantom_dataset(tmp_path_factory) -> Path:
    """Four lumbar phantoms at 4 mm; returns the manifest path"""
    out = tmp_path_factory.mktemp("phantoms")
    generate_dataset(4, FovPolicy.LUMBAR, seed=11, out_dir=out, resolution_mm=4.0, noise_sd=0.0)
    return out / "manifest.json"


@pytest.fixture(scope="session")
def prepared_dataset(phantom_dataset, tmp_path_factory) -> Path:
    """Prepared pairs of the phantom dataset; returns the prepared manifest path"""
    out = tmp_path_factory.mktemp("prepared")
    prepare_dataset(phantom_dataset, out, PrepareOptions(resolution_mm=4.0, sigma_mm=6.0, n_aug=2, seed=2))
    return out / "prepared_manifest.json"
