# btrfly/services/reformation.py
import logging
import math
from collections import Counter
from typing import Iterable, Optional, Sequence

import numpy as np

from btrfly.core.config import settings
from btrfly.core.exceptions import EmptyDataset, EmptyProjection, ShapeError
from btrfly.core.taxonomy import NUM_CHANNELS, VertebraLabel
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.heatmap import HeatmapStack, with_background
from btrfly.schemas.projection import ProjectionKind, ProjectionSpec, View
from btrfly.schemas.volume import GeometryLike, Volume

logger = logging.getLogger(__name__)


def _collapsed_range(spec: ProjectionSpec, n: int) -> slice:
    axis = spec.view.collapsed_axis
    if spec.kind is ProjectionKind.SLAB_MIP:
        start, count = spec.slab_range
        if count < 1 or start < 0 or start >= n:
            raise EmptyProjection(f"slab {spec.slab_range} is empty for an axis of {n} voxels")
        return slice(start, min(start + count, n))
    if spec.box is not None and spec.kind in (ProjectionKind.LOCALIZED_MIP, ProjectionKind.WEIGHTED_MEANIP):
        lo, hi = spec.box.lower[axis], min(spec.box.upper[axis], n - 1)
        if lo > hi or lo >= n:
            raise EmptyProjection(f"box {spec.box.lower}-{spec.box.upper} has no voxel along axis {axis}")
        return slice(lo, hi + 1)
    return slice(0, n)


def project(volume: Volume, spec: ProjectionSpec, fill: float = settings.HU_FLOOR) -> np.ndarray:
    """
    Projects a volume to a 2D reformation.

    Sagittal images are (h x w), coronal (h x d). MIP kinds take the maximum
    over the collapsed axis (restricted to the slab or box); weighted meanIP
    is sum(w * x) / sum(w), with `fill` where the weights sum to zero.

    Raises:
        EmptyProjection: the slab or box selects no voxel
    """
    axis = spec.view.collapsed_axis
    span = _collapsed_range(spec, volume.shape[axis])
    index = [slice(None)] * 3
    index[axis] = span
    data = volume.data[tuple(index)]

    if spec.kind is ProjectionKind.WEIGHTED_MEANIP:
        if spec.weights.shape != volume.shape:
            raise ShapeError(f"weights {spec.weights.shape} do not match volume {volume.shape}")
        weights = spec.weights[tuple(index)].astype(np.float64)
        numerator = (weights * data).sum(axis=axis)
        denominator = weights.sum(axis=axis)
        image = np.full(numerator.shape, fill, dtype=np.float64)
        np.divide(numerator, denominator, out=image, where=denominator > 0)
        return image
    return data.max(axis=axis)


def sample_slab(view: View, volume: Volume, rng_seed: int) -> ProjectionSpec:
    """
    Draws a slab projection: thickness n ~ U[ceil(D/2), D], start ~ U[0, D - n].

    D is the extent of the collapsed axis; the draw is deterministic in `rng_seed`.
    """
    extent = volume.shape[view.collapsed_axis]
    rng = np.random.default_rng(rng_seed)
    thickness = int(rng.integers(math.ceil(extent / 2), extent, endpoint=True))
    start = int(rng.integers(0, extent - thickness, endpoint=True))
    return ProjectionSpec(
        view=view,
        kind=ProjectionKind.SLAB_MIP,
        slab_range=(start, thickness),
        seed=rng_seed,
    )


def _axis_coordinates(geometry: GeometryLike) -> list[np.ndarray]:
    return [
        origin + np.arange(n, dtype=np.float64) * spacing
        for n, spacing, origin in zip(geometry.shape, geometry.spacing, geometry.origin)
    ]


def _gaussian_factors(geometry: GeometryLike, centre_mm: Sequence[float], sigma_mm: float) -> list[np.ndarray]:
    return [
        np.exp(-((coords - c) ** 2) / (2.0 * sigma_mm ** 2))
        for coords, c in zip(_axis_coordinates(geometry), centre_mm)
    ]


def gaussian_map(geometry: GeometryLike, centre_mm: Sequence[float], sigma_mm: float) -> np.ndarray:
    """exp(-||x - mu||^2 / 2 sigma^2) on the voxel grid, distances in mm"""
    factors = _gaussian_factors(geometry, centre_mm, sigma_mm)
    return factors[0][:, None, None] * factors[1][None, :, None] * factors[2][None, None, :]


def make_heatmap_3d(
    volume: GeometryLike,
    annotations: AnnotationSet,
    sigma_mm: float,
    dtype: np.dtype = np.float64,
) -> HeatmapStack:
    """
    27-channel 3D target: one Gaussian per annotated vertebra, background 1 - max.

    Absent labels leave their channel at zero. Needs h*w*d*27 values of
    `dtype`; `view_heatmap` gives the 2D projections without the 3D stack.
    """
    if sigma_mm <= 0:
        raise ValueError(f"sigma_mm must be positive, got {sigma_mm}")
    geometry = volume.geometry if isinstance(volume, Volume) else volume
    data = np.zeros((*geometry.shape, NUM_CHANNELS), dtype=dtype)
    for label in annotations:
        data[..., int(label)] = gaussian_map(geometry, annotations.position(label), sigma_mm)
    np.subtract(1.0, data[..., 1:].max(axis=-1), out=data[..., 0])
    return HeatmapStack(data=data, sigma_mm=sigma_mm, includes_background=True)


def view_heatmap(
    volume: GeometryLike,
    annotations: AnnotationSet,
    sigma_mm: float,
    view: View,
    span: Optional[slice] = None,
) -> HeatmapStack:
    """
    2D target of one view, equal to ``project_heatmap(make_heatmap_3d(...), view, span)``.

    Each Gaussian is separable with positive factors, so its maximum along the
    collapsed axis is the in-plane product times the peak of that axis's factor.
    """
    if sigma_mm <= 0:
        raise ValueError(f"sigma_mm must be positive, got {sigma_mm}")
    geometry = volume.geometry if isinstance(volume, Volume) else volume
    axis = view.collapsed_axis
    kept = 3 - axis
    foreground = np.zeros((geometry.shape[0], geometry.shape[kept], NUM_CHANNELS - 1), dtype=np.float64)
    for label in annotations:
        factors = _gaussian_factors(geometry, annotations.position(label), sigma_mm)
        collapsed = factors[axis] if span is None else factors[axis][span]
        peak = collapsed.max() if collapsed.size else 0.0
        foreground[..., int(label) - 1] = factors[0][:, None] * factors[kept][None, :] * peak
    return HeatmapStack(data=with_background(foreground), sigma_mm=sigma_mm, includes_background=True)


def project_heatmap(heatmap: HeatmapStack, view: View, span: Optional[slice] = None) -> HeatmapStack:
    """
    Channelwise max projection of a 3D target; background recomputed as 1 - max.

    `span` optionally restricts the collapsed axis (as for localized projections).
    """
    if not heatmap.includes_background or heatmap.data.ndim != 4:
        raise ShapeError("project_heatmap expects a 3D stack with background")
    axis = view.collapsed_axis
    foreground = heatmap.foreground
    if span is not None:
        index = [slice(None)] * 4
        index[axis] = span
        foreground = foreground[tuple(index)]
    return HeatmapStack(
        data=with_background(foreground.max(axis=axis)),
        sigma_mm=heatmap.sigma_mm,
        includes_background=True,
    )


def label_counts(train_annotations: Iterable[AnnotationSet]) -> Counter:
    counts: Counter = Counter()
    for annotations in train_annotations:
        counts.update(annotations.labels)
    return counts


def median_frequency_weights(train_annotations: list[AnnotationSet]) -> dict[VertebraLabel, float]:
    """
    Median-frequency class weights over the occurrence of vertebral labels.

    w_c = median(count over occurring labels) / count_c; labels never seen get 0.

    Raises:
        EmptyDataset: no annotation sets, or no label occurs in any of them
    """
    if not train_annotations:
        raise EmptyDataset("median frequency weights need at least one training scan")
    counts = label_counts(train_annotations)
    if not counts:
        raise EmptyDataset("no vertebra label occurs in the training annotations")
    median = float(np.median(list(counts.values())))
    return {label: (median / counts[label] if counts[label] else 0.0) for label in VertebraLabel}


def class_weight_vector(weights: dict[VertebraLabel, float], background: float = 1.0) -> np.ndarray:
    """27-entry weight vector (channel 0 = background) for the cross-entropy term"""
    vector = np.zeros(NUM_CHANNELS, dtype=np.float32)
    vector[0] = background
    for label, value in weights.items():
        vector[int(label)] = value
    return vector


def to_network_input(image: np.ndarray) -> np.ndarray:
    """HU reformation to network range: air -1, water 0, 1000 HU -> 1"""
    return (np.asarray(image, dtype=np.float32) / 1000.0).astype(np.float32)
