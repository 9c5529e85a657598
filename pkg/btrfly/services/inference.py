# btrfly/services/inference.py
import logging
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from btrfly.core.config import settings
from btrfly.core.exceptions import ShapeError
from btrfly.core.taxonomy import NUM_VERTEBRAE, label_from_index
from btrfly.models.btrfly import BtrflyNet
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.heatmap import HeatmapStack
from btrfly.schemas.projection import ProjectionKind, ProjectionSpec, View
from btrfly.schemas.volume import BoundingBox, GeometryLike, Volume, VolumeGeometry, voxel_to_physical
from btrfly.services import localizer as localizer_service
from btrfly.services import reformation, volume_io

logger = logging.getLogger(__name__)


class InferenceOptions(BaseModel):
    threshold: float = Field(0.0, ge=0.0, lt=1.0)
    resolution_mm: float = Field(settings.WORKING_RESOLUTION_MM, gt=0.0)
    bbox_pad_vox: int = Field(settings.BBOX_PAD_VOX, ge=0)


class ViewPrediction(BaseModel):
    """Clamped network heatmaps of one scan, channels last"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sagittal: HeatmapStack
    coronal: HeatmapStack
    geometry: VolumeGeometry
    box: Optional[BoundingBox] = None


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")


def threshold_heatmap(heatmap: HeatmapStack, threshold: float) -> HeatmapStack:
    """Zeroes vertebra responses below `threshold`; the background channel is left as-is"""
    _check_threshold(threshold)
    if threshold == 0.0:
        return heatmap
    data = heatmap.data.copy()
    foreground = data[..., 1:] if heatmap.includes_background else data
    foreground[foreground < threshold] = 0.0
    return HeatmapStack(data=data, sigma_mm=heatmap.sigma_mm, includes_background=heatmap.includes_background)


def _foreground_2d(heatmap: HeatmapStack) -> np.ndarray:
    if heatmap.data.ndim != 3:
        raise ShapeError(f"expected a 2D heatmap stack, got shape {heatmap.data.shape}")
    return heatmap.foreground


def fuse(sagittal: HeatmapStack, coronal: HeatmapStack) -> np.ndarray:
    """
    Outer product of the two views per vertebra channel.

    Returns:
        (h, w, d, 26) array with out[i, j, k, c] = sag[i, j, c] * cor[i, k, c]

    Raises:
        ShapeError: the views disagree on height
    """
    sag, cor = _foreground_2d(sagittal), _foreground_2d(coronal)
    if sag.shape[0] != cor.shape[0]:
        raise ShapeError(f"sagittal height {sag.shape[0]} differs from coronal height {cor.shape[0]}")
    return np.einsum("ijc,ikc->ijkc", sag, cor)


def _argmax_entry(channel: np.ndarray) -> Optional[tuple[tuple[int, int, int], float]]:
    flat = int(np.argmax(channel))
    peak = float(channel.flat[flat])
    if peak <= 0.0:
        return None
    return tuple(int(i) for i in np.unravel_index(flat, channel.shape)), peak


def extract_centroids(fused: np.ndarray, volume: GeometryLike) -> AnnotationSet:
    """
    One centroid per channel with a positive maximum, at its argmax (lowest
    linear index on ties) in mm; confidence is the channel maximum.
    """
    if fused.ndim != 4 or fused.shape[-1] != NUM_VERTEBRAE:
        raise ShapeError(f"expected (h, w, d, 26) fused heatmaps, got {fused.shape}")
    if fused.shape[:3] != tuple(volume.shape):
        raise ShapeError(f"fused grid {fused.shape[:3]} does not match volume {volume.shape}")
    entries, confidences = {}, {}
    for c in range(NUM_VERTEBRAE):
        found = _argmax_entry(fused[..., c])
        if found is None:
            continue
        index, peak = found
        label = label_from_index(c + 1)
        entries[label] = voxel_to_physical(index, volume)
        confidences[label] = peak
    return AnnotationSet(entries=entries, confidences=confidences)


def centroids_from_views(
    sagittal: HeatmapStack, coronal: HeatmapStack, volume: GeometryLike, threshold: float = 0.0
) -> AnnotationSet:
    """Threshold, fuse and extract, one channel at a time to bound memory"""
    sag = _foreground_2d(threshold_heatmap(sagittal, threshold))
    cor = _foreground_2d(threshold_heatmap(coronal, threshold))
    if sag.shape[0] != cor.shape[0]:
        raise ShapeError(f"sagittal height {sag.shape[0]} differs from coronal height {cor.shape[0]}")
    grid = (sag.shape[0], sag.shape[1], cor.shape[1])
    if grid != tuple(volume.shape):
        raise ShapeError(f"view grid {grid} does not match volume {volume.shape}")
    entries, confidences = {}, {}
    for c in range(NUM_VERTEBRAE):
        if not sag[..., c].any() or not cor[..., c].any():
            continue
        found = _argmax_entry(np.einsum("ij,ik->ijk", sag[..., c], cor[..., c]))
        if found is None:
            continue
        index, peak = found
        label = label_from_index(c + 1)
        entries[label] = voxel_to_physical(index, volume)
        confidences[label] = peak
    return AnnotationSet(entries=entries, confidences=confidences)


def _pad_input(image: np.ndarray, factor: int, width: int) -> torch.Tensor:
    height = image.shape[0] + (-image.shape[0]) % factor
    width = width + (-width) % factor
    padded = np.pad(
        image,
        [(0, height - image.shape[0]), (0, width - image.shape[1])],
        mode="constant",
        constant_values=settings.HU_FLOOR,
    )
    return torch.from_numpy(reformation.to_network_input(padded))[None, None]


def _to_stack(output: torch.Tensor, height: int, width: int) -> HeatmapStack:
    data = output[0, :, :height, :width].clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy().astype(np.float64)
    return HeatmapStack(data=data, includes_background=True)


@torch.no_grad()
def predict_views(
    model: BtrflyNet,
    sag: np.ndarray,
    cor: np.ndarray,
    sag_mean: Optional[np.ndarray] = None,
    cor_mean: Optional[np.ndarray] = None,
) -> tuple[HeatmapStack, HeatmapStack]:
    """
    Runs the labeller on one pair of HU reformations.

    Inputs are padded with -1000 to the downsampling factor (both views to
    the same width), outputs cropped back and clamped to [0, 1].
    """
    model.eval()
    device = next(model.parameters()).device
    factor = model.config.downsampling
    width = max(sag.shape[1], cor.shape[1])

    def prepare(image: Optional[np.ndarray]) -> Optional[torch.Tensor]:
        return None if image is None else _pad_input(image, factor, width).to(device)

    sag_out, cor_out = model(prepare(sag), prepare(cor), prepare(sag_mean), prepare(cor_mean))
    return _to_stack(sag_out, *sag.shape), _to_stack(cor_out, *cor.shape)


def project_views(
    processed: Volume,
    kind: ProjectionKind,
    dual_input: bool,
    box: Optional[BoundingBox] = None,
    weights: Optional[np.ndarray] = None,
) -> dict[str, Optional[np.ndarray]]:
    """Test-time reformations: full-range MIP, or localized MIP (+ weighted meanIP)"""
    images: dict[str, Optional[np.ndarray]] = {}
    for view, name in ((View.SAGITTAL, "sag"), (View.CORONAL, "cor")):
        if kind is ProjectionKind.LOCALIZED_MIP:
            spec = ProjectionSpec(view=view, kind=kind, box=box)
        else:
            spec = ProjectionSpec(view=view, kind=ProjectionKind.NAIVE_MIP)
        images[name] = reformation.project(processed, spec)
        images[f"{name}_mean"] = None
        if dual_input:
            mean_spec = ProjectionSpec(view=view, kind=ProjectionKind.WEIGHTED_MEANIP, weights=weights, box=box)
            images[f"{name}_mean"] = reformation.project(processed, mean_spec)
    return images


def predict_volume(
    model: BtrflyNet,
    volume: Volume,
    options: Optional[InferenceOptions] = None,
    localizer: Optional[SpineLocalizerNet] = None,
) -> ViewPrediction:
    """
    Preprocesses a raw scan, (optionally) localizes the spine and predicts both views.

    Localized MIPs and the dual-input variant need `localizer`.
    """
    options = options or InferenceOptions()
    processed = volume_io.preprocess(volume, options.resolution_mm)
    kind, box, weights = ProjectionKind.NAIVE_MIP, None, None
    if localizer is not None:
        located = localizer_service.localize_volume(localizer, volume, pad_vox=options.bbox_pad_vox)
        kind = ProjectionKind.LOCALIZED_MIP
        box = located.box.rescaled(located.geometry, processed)
        weights = volume_io.resample_to_geometry(located.heatmap, located.geometry, processed.geometry)
    elif model.config.dual_input:
        raise ShapeError("dual-input networks need a localizer for the weighted meanIP")
    images = project_views(processed, kind, model.config.dual_input, box, weights)
    sag, cor = predict_views(model, images["sag"], images["cor"], images["sag_mean"], images["cor_mean"])
    return ViewPrediction(sagittal=sag, coronal=cor, geometry=processed.geometry, box=box)


def infer_volume(
    model: BtrflyNet,
    volume: Volume,
    options: Optional[InferenceOptions] = None,
    localizer: Optional[SpineLocalizerNet] = None,
) -> AnnotationSet:
    """Full test-time pipeline from a raw scan to predicted centroids in mm"""
    options = options or InferenceOptions()
    prediction = predict_volume(model, volume, options, localizer)
    annotations = centroids_from_views(prediction.sagittal, prediction.coronal, prediction.geometry, options.threshold)
    logger.info("Predicted %d vertebrae at T=%.2f", len(annotations), options.threshold)
    return annotations
