import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from btrfly.core.exceptions import ShapeError
from btrfly.core.taxonomy import NUM_CHANNELS, NUM_VERTEBRAE


class HeatmapStack(BaseModel):
    """
    Per-vertebra Gaussian responses, channels last.

    With background the stack has 27 channels (channel 0 = background),
    without it 26 channels where index ``c`` holds vertebra ``c + 1``.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray
    sigma_mm: float = Field(0.0, ge=0.0)
    includes_background: bool = True

    @field_validator("data", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        return np.asarray(value)

    @model_validator(mode="after")
    def _channel_count(self) -> "HeatmapStack":
        expected = NUM_CHANNELS if self.includes_background else NUM_VERTEBRAE
        if self.data.ndim not in (3, 4) or self.data.shape[-1] != expected:
            raise ShapeError(
                f"heatmap must be (spatial..., {expected}), got {self.data.shape}"
            )
        return self

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[:-1])

    @property
    def foreground(self) -> np.ndarray:
        """Vertebra channels only, (spatial..., 26)"""
        return self.data[..., 1:] if self.includes_background else self.data

    def channel(self, label: int) -> np.ndarray:
        """Map of vertebra `label` (1..26)"""
        return self.foreground[..., int(label) - 1]

    def without_background(self) -> "HeatmapStack":
        return HeatmapStack(data=self.foreground, sigma_mm=self.sigma_mm, includes_background=False)

    def with_foreground(self, foreground: np.ndarray) -> "HeatmapStack":
        """Rebuilds a 27-channel stack whose background is 1 - max(foreground)"""
        return HeatmapStack(
            data=with_background(foreground), sigma_mm=self.sigma_mm, includes_background=True
        )


def with_background(foreground: np.ndarray) -> np.ndarray:
    """Prepends the background complement channel to a (spatial..., 26) array"""
    background = 1.0 - foreground.max(axis=-1, keepdims=True)
    return np.concatenate([background, foreground], axis=-1)
