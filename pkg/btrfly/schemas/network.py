from typing import Optional

from pydantic import BaseModel, Field, model_validator


class BtrflyConfig(BaseModel):
    """Schema for the butterfly labeller (or the Cor.+Sag. baseline when arms are not fused)"""
    base_filters: int = Field(32, ge=1, description="Filters of the first encoder stage; doubles per stage")
    bottleneck_channels: int = Field(1024, ge=2, description="Latent width; halved per arm for the baseline")
    arms_fused: bool = Field(True, description="Butterfly (True) or independent Cor.+Sag. arms (False)")
    dual_input: bool = Field(False, description="Localized MIP + meanIP input per view")
    dual_input_filters: int = Field(32, ge=1)
    encoder_stages: int = Field(3, ge=1, description="Stride-2 stages per arm before fusion")
    out_channels: int = 27
    input_dims: Optional[tuple[tuple[int, int], tuple[int, int]]] = Field(
        None, description="((h, w), (h, d)); checked by forward when set"
    )

    @model_validator(mode="after")
    def _even_bottleneck(self) -> "BtrflyConfig":
        if self.bottleneck_channels % 2:
            raise ValueError("bottleneck_channels must be even")
        return self

    @property
    def arm_bottleneck_channels(self) -> int:
        return self.bottleneck_channels // 2

    @property
    def downsampling(self) -> int:
        return 2 ** self.encoder_stages


class EBDConfig(BaseModel):
    """Schema for the energy-based (autoencoder) discriminator"""
    dropout_keep: float = Field(0.8, gt=0.0, le=1.0)
    margin_initial: float = Field(10.0, ge=0.0, description="m0, decayed linearly to 0")
    receptive_field_px: int = Field(128, ge=1, description="Minimum in-plane receptive field of the encoder")
    base_channels: int = Field(16, ge=1)
    pool_stages: int = Field(2, ge=0, description="Average-pooling stages in the encoder")
    dilations: tuple[int, ...] = Field((2, 4, 8, 16), description="In-plane dilations after pooling")


class WDConfig(BaseModel):
    """Schema for the Wasserstein critic with 3D spatial pyramid pooling"""
    spp_levels: tuple[int, ...] = (3, 4)
    final_feature_channels: int = Field(20, ge=1)
    gp_lambda: float = Field(10.0, ge=0.0)
    base_channels: int = Field(16, ge=1)
    strided_stages: int = Field(3, ge=1)
    dense_units: int = Field(64, ge=1)
    min_input_size: int = Field(8, ge=1, description="Smallest accepted in-plane size")

    @property
    def spp_length(self) -> int:
        return sum(level ** 3 for level in self.spp_levels) * self.final_feature_channels


class LocalizerConfig(BaseModel):
    """Schema for the 3D spine localizer U-network"""
    base_filters: int = Field(8, ge=1)
    depth: int = Field(3, ge=1, description="Average-pooling stages")

    @property
    def downsampling(self) -> int:
        return 2 ** self.depth
