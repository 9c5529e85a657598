from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from btrfly.core.exceptions import ShapeError


class ViewSample(BaseModel):
    """One view of a training pair: HU image(s) and a (h, width, 27) target"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    target: np.ndarray
    image_mean: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _matching_shapes(self) -> "ViewSample":
        if self.image.shape != self.target.shape[:-1]:
            raise ShapeError(f"image {self.image.shape} does not match target {self.target.shape}")
        if self.image_mean is not None and self.image_mean.shape != self.image.shape:
            raise ShapeError("meanIP and MIP of a view must share dimensions")
        return self


class PairSample(BaseModel):
    """Sagittal + coronal views of one scan"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scan_id: str
    sagittal: ViewSample
    coronal: ViewSample
