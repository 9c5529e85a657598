from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from btrfly.core.exceptions import EmptyProjection
from btrfly.schemas.volume import BoundingBox


class View(str, Enum):
    SAGITTAL = "sagittal"
    CORONAL = "coronal"

    @property
    def collapsed_axis(self) -> int:
        """Sagittal images are (h x w) and collapse axis 2; coronal are (h x d) and collapse axis 1"""
        return 2 if self is View.SAGITTAL else 1


class ProjectionKind(str, Enum):
    NAIVE_MIP = "naive_mip"
    LOCALIZED_MIP = "localized_mip"
    WEIGHTED_MEANIP = "weighted_meanip"
    SLAB_MIP = "slab_mip"


class ProjectionSpec(BaseModel):
    """Rule turning a volume into one 2D reformation"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    view: View
    kind: ProjectionKind = ProjectionKind.NAIVE_MIP
    slab_range: Optional[tuple[int, int]] = Field(None, description="(start, count) in voxels")
    weights: Optional[np.ndarray] = Field(None, description="3D weight map for weighted_meanip")
    box: Optional[BoundingBox] = None
    seed: Optional[int] = Field(None, description="Seed the slab was drawn with")

    @model_validator(mode="after")
    def _required_parts(self) -> "ProjectionSpec":
        if self.kind is ProjectionKind.SLAB_MIP and self.slab_range is None:
            raise EmptyProjection("slab_mip needs a slab_range")
        if self.kind is ProjectionKind.LOCALIZED_MIP and self.box is None:
            raise EmptyProjection("localized_mip needs a bounding box")
        if self.kind is ProjectionKind.WEIGHTED_MEANIP and self.weights is None:
            raise ValueError("weighted_meanip needs a weight map")
        return self
