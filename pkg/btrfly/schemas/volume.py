import math
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from btrfly.core.exceptions import OutOfBounds, ShapeError

Triple = tuple[float, float, float]
IndexTriple = tuple[int, int, int]


class VolumeGeometry(BaseModel):
    """Voxel grid of a scan: shape, spacing (mm/voxel) and origin (mm)"""
    model_config = ConfigDict(frozen=True)

    shape: IndexTriple
    spacing: Triple = Field((1.0, 1.0, 1.0), description="mm per voxel along (h, w, d)")
    origin: Triple = Field((0.0, 0.0, 0.0), description="physical position of voxel (0, 0, 0)")

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, value: IndexTriple) -> IndexTriple:
        if min(value) < 1:
            raise ShapeError(f"volume dimensions must be >= 1, got {value}")
        return value

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, value: Triple) -> Triple:
        if min(value) <= 0:
            raise ValueError(f"spacing components must be > 0, got {value}")
        return value

    @property
    def extent_mm(self) -> Triple:
        """Physical position of the last voxel along each axis"""
        return tuple(o + (n - 1) * s for o, n, s in zip(self.origin, self.shape, self.spacing))


class Volume(BaseModel):
    """CT scan: (h, w, d) scalar array with spacing/origin metadata"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    @field_validator("data", mode="before")
    @classmethod
    def _three_dimensional(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value)
        if value.ndim != 3:
            raise ShapeError(f"volume data must be 3D, got shape {value.shape}")
        if min(value.shape) < 1:
            raise ShapeError(f"volume dimensions must be >= 1, got {value.shape}")
        return value

    @model_validator(mode="after")
    def _positive_spacing(self) -> "Volume":
        if min(self.spacing) <= 0:
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        return self

    @property
    def shape(self) -> IndexTriple:
        return tuple(int(n) for n in self.data.shape)

    @property
    def geometry(self) -> VolumeGeometry:
        return VolumeGeometry(shape=self.shape, spacing=self.spacing, origin=self.origin)

    def with_data(self, data: np.ndarray, origin: Triple | None = None) -> "Volume":
        """Copy with new voxel values (and optionally a shifted origin), same spacing"""
        return Volume(data=data, spacing=self.spacing, origin=self.origin if origin is None else origin)

    def __repr__(self) -> str:
        return f"<Volume shape={self.shape} spacing={self.spacing} origin={self.origin}>"


GeometryLike = Union[Volume, VolumeGeometry]


def _round_half_down(x: float) -> int:
    return int(math.ceil(x - 0.5))


def physical_to_voxel(point: Sequence[float], volume: GeometryLike) -> IndexTriple:
    """
    Snaps a physical point (mm) to the nearest voxel index.

    Ties (exactly half-way between two voxels) go to the lower index.

    Raises:
        OutOfBounds: the snapped index falls outside the grid
    """
    index = tuple(
        _round_half_down((p - o) / s) for p, o, s in zip(point, volume.origin, volume.spacing)
    )
    if any(i < 0 or i >= n for i, n in zip(index, volume.shape)):
        raise OutOfBounds(f"point {tuple(point)} mm maps to {index}, outside grid {volume.shape}")
    return index


def voxel_to_physical(index: Sequence[int], volume: GeometryLike) -> Triple:
    return tuple(float(o + i * s) for i, o, s in zip(index, volume.origin, volume.spacing))


class BoundingBox(BaseModel):
    """Inclusive voxel box; `lower` and `upper` are both inside the box"""
    model_config = ConfigDict(frozen=True)

    lower: IndexTriple
    upper: IndexTriple
    padding_vox: int = 0

    @model_validator(mode="after")
    def _ordered(self) -> "BoundingBox":
        if any(lo > up for lo, up in zip(self.lower, self.upper)):
            raise ShapeError(f"box lower {self.lower} exceeds upper {self.upper}")
        return self

    @property
    def size(self) -> IndexTriple:
        return tuple(up - lo + 1 for lo, up in zip(self.lower, self.upper))

    @property
    def volume_vox(self) -> int:
        return int(np.prod(self.size))

    def axis_range(self, axis: int) -> slice:
        return slice(self.lower[axis], self.upper[axis] + 1)

    def clamped(self, shape: Sequence[int]) -> "BoundingBox":
        lower = tuple(min(max(lo, 0), n - 1) for lo, n in zip(self.lower, shape))
        upper = tuple(min(max(up, 0), n - 1) for up, n in zip(self.upper, shape))
        return BoundingBox(lower=lower, upper=upper, padding_vox=self.padding_vox)

    def rescaled(self, source: GeometryLike, target: GeometryLike) -> "BoundingBox":
        """Maps the box between two grids of the same physical space (e.g. 4 mm to 2 mm)"""
        lo_mm = voxel_to_physical(self.lower, source)
        hi_mm = voxel_to_physical(self.upper, source)
        lower = tuple(
            int(math.floor((p - o) / s)) for p, o, s in zip(lo_mm, target.origin, target.spacing)
        )
        upper = tuple(
            int(math.ceil((p - o) / s)) for p, o, s in zip(hi_mm, target.origin, target.spacing)
        )
        return BoundingBox(lower=lower, upper=upper, padding_vox=self.padding_vox).clamped(target.shape)
