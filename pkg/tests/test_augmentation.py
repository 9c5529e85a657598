import numpy as np
import pytest

from btrfly.schemas.sample import PairSample, ViewSample
from btrfly.schemas.training import AugmentationConfig
from btrfly.services.augmentation import (
    IDENTITY,
    AugmentationParams,
    augment,
    augment_sample,
    draw_augmentation,
)


def point_sample(h=20, w=16, at=(5, 5), channel=3) -> ViewSample:
    image = np.full((h, w), -1000.0, dtype=np.float32)
    image[at] = 500.0
    foreground = np.zeros((h, w, 26), dtype=np.float32)
    foreground[at + (channel - 1,)] = 1.0
    target = np.concatenate([1.0 - foreground.max(axis=-1, keepdims=True), foreground], axis=-1)
    return ViewSample(image=image, target=target)


def test_identity_returns_sample_unchanged():
    sample = point_sample()
    assert augment(sample, IDENTITY) is sample
    assert draw_augmentation(AugmentationConfig(enabled=False), np.random.default_rng(0)) is IDENTITY


def test_integer_translation_moves_image_and_target_together():
    moved = augment(point_sample(), AugmentationParams(translate=(2.0, 3.0)))
    assert moved.image[7, 8] == pytest.approx(500.0)
    assert moved.image[5, 5] == pytest.approx(-1000.0)
    assert moved.target[7, 8, 3] == pytest.approx(1.0)
    assert moved.target[7, 8, 0] == pytest.approx(0.0)
    assert moved.target[5, 5, 0] == pytest.approx(1.0)


def test_outside_source_is_filled():
    moved = augment(point_sample(), AugmentationParams(translate=(0.0, 10.0)))
    np.testing.assert_allclose(moved.image[:, :10], -1000.0)
    np.testing.assert_allclose(moved.target[:, :10, 0], 1.0)
    np.testing.assert_allclose(moved.target[:, :10, 1:], 0.0)


def test_rotation_keeps_target_in_unit_range_with_background_complement():
    moved = augment(point_sample(at=(8, 6)), AugmentationParams(rotate_deg=4.0, scale=1.15))
    assert moved.target.min() >= 0.0 and moved.target.max() <= 1.0
    np.testing.assert_allclose(moved.target[..., 0], 1.0 - moved.target[..., 1:].max(axis=-1), atol=1e-6)
    assert moved.image.shape == (20, 16)


def test_draw_stays_within_ranges():
    cfg = AugmentationConfig(translate_px=10, rotate_deg=5, scale_min=0.8, scale_max=1.2)
    rng = np.random.default_rng(7)
    for _ in range(200):
        params = draw_augmentation(cfg, rng)
        assert all(abs(t) <= 10 for t in params.translate)
        assert abs(params.rotate_deg) <= 5
        assert 0.8 <= params.scale <= 1.2


def test_pair_shares_one_draw():
    pair = PairSample(scan_id="s", sagittal=point_sample(), coronal=point_sample())
    moved = augment_sample(pair, AugmentationConfig(rotate_deg=0.0, scale_min=1.0, scale_max=1.0), np.random.default_rng(2))
    np.testing.assert_array_equal(moved.sagittal.image, moved.coronal.image)
    np.testing.assert_array_equal(moved.sagittal.target, moved.coronal.target)


def test_augmentation_config_rejects_inverted_scale():
    with pytest.raises(ValueError):
        AugmentationConfig(scale_min=1.3, scale_max=1.1)
