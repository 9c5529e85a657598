# btrfly/services/augmentation.py
import math

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import ndimage

from btrfly.core.config import settings
from btrfly.schemas.heatmap import with_background
from btrfly.schemas.sample import PairSample, ViewSample
from btrfly.schemas.training import AugmentationConfig


class AugmentationParams(BaseModel):
    """One draw of the in-plane similarity transform (pixels, degrees, factor)"""
    model_config = ConfigDict(frozen=True)

    translate: tuple[float, float] = (0.0, 0.0)
    rotate_deg: float = 0.0
    scale: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self.translate == (0.0, 0.0) and self.rotate_deg == 0.0 and self.scale == 1.0


IDENTITY = AugmentationParams()


def draw_augmentation(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentationParams:
    """Uniform draw within the configured ranges; identity when augmentation is disabled"""
    if not cfg.enabled:
        return IDENTITY
    dy, dx = rng.uniform(-cfg.translate_px, cfg.translate_px, size=2)
    return AugmentationParams(
        translate=(float(dy), float(dx)),
        rotate_deg=float(rng.uniform(-cfg.rotate_deg, cfg.rotate_deg)),
        scale=float(rng.uniform(cfg.scale_min, cfg.scale_max)),
    )


def _inverse_affine(shape: tuple[int, int], params: AugmentationParams) -> tuple[np.ndarray, np.ndarray]:
    """Output->input mapping for scipy: rotation and scaling about the image centre, then translation"""
    theta = math.radians(params.rotate_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    forward = params.scale * np.array([[cos, -sin], [sin, cos]])
    matrix = np.linalg.inv(forward)
    centre = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    offset = centre - matrix @ (centre + np.asarray(params.translate))
    return matrix, offset


def _warp(image: np.ndarray, matrix: np.ndarray, offset: np.ndarray, fill: float) -> np.ndarray:
    return ndimage.affine_transform(
        image, matrix, offset=offset, order=1, mode="constant", cval=fill, output=np.float64
    )


def augment(sample: ViewSample, params: AugmentationParams) -> ViewSample:
    """
    Applies one transform to the image(s) and every target channel.

    Images are filled with -1000 HU outside the source, foreground channels
    with 0; the background channel is rebuilt as 1 - max(foreground).
    """
    if params.is_identity:
        return sample
    matrix, offset = _inverse_affine(sample.image.shape, params)
    image = _warp(sample.image, matrix, offset, settings.HU_FLOOR)
    image_mean = None
    if sample.image_mean is not None:
        image_mean = _warp(sample.image_mean, matrix, offset, settings.HU_FLOOR).astype(np.float32)
    foreground = np.stack(
        [_warp(sample.target[..., c], matrix, offset, 0.0) for c in range(1, sample.target.shape[-1])],
        axis=-1,
    )
    foreground = np.clip(foreground, 0.0, 1.0)
    return ViewSample(
        image=image.astype(np.float32),
        target=with_background(foreground).astype(np.float32),
        image_mean=image_mean,
    )


def augment_sample(sample: PairSample, cfg: AugmentationConfig, rng: np.random.Generator) -> PairSample:
    """Draws once and transforms both views, keeping the shared height axis consistent"""
    params = draw_augmentation(cfg, rng)
    return PairSample(
        scan_id=sample.scan_id,
        sagittal=augment(sample.sagittal, params),
        coronal=augment(sample.coronal, params),
    )
