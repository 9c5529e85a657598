# btrfly/services/volume_io.py
import logging
from pathlib import Path
from typing import Optional, Sequence

import nibabel as nib
import numpy as np
import SimpleITK as sitk
from scipy import ndimage

from btrfly.core.config import settings
from btrfly.core.exceptions import FormatError, ShapeError
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.volume import GeometryLike, Volume, VolumeGeometry

logger = logging.getLogger(__name__)

NIFTI_SUFFIXES = (".nii", ".nii.gz")
NRRD_SUFFIXES = (".nrrd", ".nhdr")


def _suffix(path: Path) -> str:
    name = path.name.lower()
    for suffix in NIFTI_SUFFIXES + NRRD_SUFFIXES:
        if name.endswith(suffix):
            return suffix
    return path.suffix.lower()


def load_volume(path: Path) -> Volume:
    """
    Reads a 3D NIfTI or NRRD scan.

    Args:
        path: .nii / .nii.gz / .nrrd / .nhdr file

    Returns:
        Volume with spacing and origin taken from the header

    Raises:
        FormatError: unreadable file, unknown extension or non-3D payload
    """
    path = Path(path)
    suffix = _suffix(path)
    try:
        if suffix in NIFTI_SUFFIXES:
            image = nib.load(str(path))
            data = np.asanyarray(image.dataobj)
            spacing = tuple(float(z) for z in image.header.get_zooms()[:3])
            origin = tuple(float(o) for o in image.affine[:3, 3])
        elif suffix in NRRD_SUFFIXES:
            image = sitk.ReadImage(str(path))
            # SimpleITK arrays are (z, y, x); keep index order equal to GetSize()
            data = sitk.GetArrayFromImage(image).transpose()
            spacing = tuple(float(s) for s in image.GetSpacing())
            origin = tuple(float(o) for o in image.GetOrigin())
        else:
            raise FormatError(f"unsupported volume format: {path.name}")
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc

    if data.ndim != 3 or len(spacing) != 3:
        raise FormatError(f"{path.name} is not a 3D scalar volume (shape {data.shape})")
    logger.debug("Loaded %s shape=%s spacing=%s", path.name, data.shape, spacing)
    return Volume(data=np.asarray(data), spacing=spacing, origin=origin)


def save_volume(volume: Volume, path: Path) -> Path:
    """Writes a volume as NIfTI (axis-aligned affine) or NRRD depending on the extension"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = _suffix(path)
    if suffix in NIFTI_SUFFIXES:
        affine = np.diag([*volume.spacing, 1.0])
        affine[:3, 3] = volume.origin
        nib.save(nib.Nifti1Image(volume.data, affine), str(path))
    elif suffix in NRRD_SUFFIXES:
        image = sitk.GetImageFromArray(volume.data.transpose())
        image.SetSpacing(volume.spacing)
        image.SetOrigin(volume.origin)
        sitk.WriteImage(image, str(path))
    else:
        raise FormatError(f"unsupported volume format: {path.name}")
    return path


def load_geometry(path: Path) -> VolumeGeometry:
    """
    Reads only the header of a NIfTI or NRRD scan.

    Raises:
        FormatError: unreadable file, unknown extension or non-3D payload
    """
    path = Path(path)
    suffix = _suffix(path)
    try:
        if suffix in NIFTI_SUFFIXES:
            image = nib.load(str(path))
            shape = tuple(int(n) for n in image.shape)
            spacing = tuple(float(z) for z in image.header.get_zooms()[:3])
            origin = tuple(float(o) for o in image.affine[:3, 3])
        elif suffix in NRRD_SUFFIXES:
            reader = sitk.ImageFileReader()
            reader.SetFileName(str(path))
            reader.ReadImageInformation()
            shape = tuple(int(n) for n in reader.GetSize())
            spacing = tuple(float(s) for s in reader.GetSpacing())
            origin = tuple(float(o) for o in reader.GetOrigin())
        else:
            raise FormatError(f"unsupported volume format: {path.name}")
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(shape) != 3:
        raise FormatError(f"{path.name} is not a 3D scalar volume (shape {shape})")
    return VolumeGeometry(shape=shape, spacing=spacing, origin=origin)


def load_annotations(path: Path, within: Optional[GeometryLike] = None) -> AnnotationSet:
    """
    Reads an annotation JSON; with `within`, every centroid must lie inside that volume.

    Raises:
        OutOfBounds: a centroid lies outside `within`
    """
    annotations = AnnotationSet.load(Path(path))
    if within is not None:
        annotations.check_within(within)
    return annotations


def normalize_hu(volume: Volume, floor: float = settings.HU_FLOOR) -> Volume:
    """Clips everything below `floor` (air, -1000 HU) to `floor`"""
    return volume.with_data(np.maximum(volume.data, np.asarray(floor, dtype=volume.data.dtype)))


def _linear_resample(data: np.ndarray, scale: Sequence[float], offset: Sequence[float], shape: Sequence[int]) -> np.ndarray:
    """
    Trilinear sampling of `data` at ``scale * o + offset`` for every output index ``o``.

    Coordinates past the edges take the nearest edge voxel.
    """
    return ndimage.affine_transform(
        np.asarray(data, dtype=np.float64),
        np.asarray(scale, dtype=np.float64),
        offset=np.asarray(offset, dtype=np.float64),
        output_shape=tuple(int(n) for n in shape),
        order=1,
        mode="nearest",
    )


def resample_isotropic(volume: Volume, res_mm: float) -> Volume:
    """
    Trilinear resampling to an isotropic grid sharing the input origin.

    Output dims are round(dim * spacing / res_mm) (at least 1); voxel ``o`` of
    the output sits at ``origin + o * res_mm`` so physical (mm) annotations
    stay valid without any transform.
    """
    if res_mm <= 0:
        raise ValueError(f"res_mm must be positive, got {res_mm}")
    shape = tuple(max(1, int(round(n * s / res_mm))) for n, s in zip(volume.shape, volume.spacing))
    if shape == volume.shape and all(s == res_mm for s in volume.spacing):
        data = volume.data.astype(np.float64, copy=False)
    else:
        scale = [res_mm / s for s in volume.spacing]
        data = _linear_resample(volume.data, scale, (0.0, 0.0, 0.0), shape)
    logger.debug("Resampled %s -> %s at %.2f mm", volume.shape, data.shape, res_mm)
    out_dtype = volume.data.dtype if np.issubdtype(volume.data.dtype, np.floating) else np.float64
    return Volume(
        data=data.astype(out_dtype, copy=False),
        spacing=(res_mm, res_mm, res_mm),
        origin=volume.origin,
    )


def pad_views_to_match(volume: Volume, fill: float = settings.HU_FLOOR) -> Volume:
    """
    Centre-pads the smaller of axes 1 (w) and 2 (d) with `fill` until w == d.

    Odd remainders put the extra voxel at the high end; the origin moves so
    that existing voxels keep their physical position.
    """
    _, w, d = volume.shape
    if w == d:
        return volume
    axis = 1 if w < d else 2
    diff = abs(w - d)
    low = diff // 2
    high = diff - low
    pad = [(0, 0), (0, 0), (0, 0)]
    pad[axis] = (low, high)
    origin = list(volume.origin)
    origin[axis] -= low * volume.spacing[axis]
    data = np.pad(volume.data, pad, mode="constant", constant_values=fill)
    return volume.with_data(data, origin=tuple(origin))


def pad_to_multiple(volume: Volume, factor: int, fill: float = settings.HU_FLOOR) -> Volume:
    """Pads every axis at the high end so each dimension is divisible by `factor`"""
    if factor < 1:
        raise ShapeError(f"padding factor must be >= 1, got {factor}")
    pad = [(0, (-n) % factor) for n in volume.shape]
    if not any(high for _, high in pad):
        return volume
    return volume.with_data(np.pad(volume.data, pad, mode="constant", constant_values=fill))


def preprocess(volume: Volume, res_mm: float) -> Volume:
    """HU clipping, isotropic resampling and view padding, in that order"""
    return pad_views_to_match(resample_isotropic(normalize_hu(volume), res_mm))


def resample_to_geometry(data: np.ndarray, source: VolumeGeometry, target: VolumeGeometry, fill: float = 0.0) -> np.ndarray:
    """
    Trilinear resampling of `data` (on `source`) onto the voxel centres of `target`.

    Target voxels outside the source extent receive `fill`.
    """
    if data.shape != source.shape:
        raise ShapeError(f"data {data.shape} does not match source grid {source.shape}")
    scale = [t / s for t, s in zip(target.spacing, source.spacing)]
    offset = [(t - s) / sp for t, s, sp in zip(target.origin, source.origin, source.spacing)]
    out = _linear_resample(data, scale, offset, target.shape)
    outside = np.zeros(target.shape, dtype=bool)
    for axis in range(3):
        positions = np.arange(target.shape[axis]) * scale[axis] + offset[axis]
        mask_shape = [1, 1, 1]
        mask_shape[axis] = -1
        beyond = (positions < -0.5) | (positions > source.shape[axis] - 0.5)
        outside |= beyond.reshape(mask_shape)
    out[outside] = fill
    return out
