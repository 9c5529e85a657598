"""
Prior-encoding discriminators.

Both read a 26-channel heatmap (background stripped) as a single-feature 3D
volume of shape (N, 1, h, width, 26), so convolutions also run across the
vertebra axis and see neighbouring labels together.
"""
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from btrfly.core.exceptions import ShapeError
from btrfly.core.taxonomy import NUM_CHANNELS, NUM_VERTEBRAE
from btrfly.schemas.network import EBDConfig, WDConfig


def as_adversary_input(heatmaps: torch.Tensor) -> torch.Tensor:
    """(N, 27 | 26, h, w) network-layout heatmaps -> (N, 1, h, w, 26), background dropped"""
    if heatmaps.dim() != 4 or heatmaps.shape[1] not in (NUM_CHANNELS, NUM_VERTEBRAE):
        raise ShapeError(f"expected (N, 27|26, h, w) heatmaps, got {tuple(heatmaps.shape)}")
    if heatmaps.shape[1] == NUM_CHANNELS:
        heatmaps = heatmaps[:, 1:]
    return heatmaps.permute(0, 2, 3, 1).unsqueeze(1)


def _norm_act(channels: int) -> list[nn.Module]:
    return [nn.LeakyReLU(0.2, inplace=True), nn.BatchNorm3d(channels)]


class EnergyDiscriminator(nn.Module):
    """
    Fully-convolutional 3D autoencoder; D(y) = ||y - rec(y)||_2.

    Encoder: convolution, in-plane average pooling stages, then in-plane
    dilated convolutions; every encoding layer is followed by dropout.
    Decoder: transposed convolutions back to the input grid and a linear
    1-feature convolution.
    """

    def __init__(self, config: Optional[EBDConfig] = None):
        super().__init__()
        self.config = config or EBDConfig()
        cfg = self.config
        if self.receptive_field(cfg) < cfg.receptive_field_px:
            raise ValueError(
                f"encoder receptive field {self.receptive_field(cfg)} px is below {cfg.receptive_field_px} px"
            )
        drop = 1.0 - cfg.dropout_keep
        channels = cfg.base_channels
        encoder: list[nn.Module] = [nn.Conv3d(1, channels, 3, padding=1), *_norm_act(channels), nn.Dropout(drop)]
        for _ in range(cfg.pool_stages):
            encoder += [
                nn.AvgPool3d((2, 2, 1), stride=(2, 2, 1)),
                nn.Conv3d(channels, channels * 2, 3, padding=1),
                *_norm_act(channels * 2),
                nn.Dropout(drop),
            ]
            channels *= 2
        for dilation in cfg.dilations:
            encoder += [
                nn.Conv3d(channels, channels, 3, padding=(dilation, dilation, 1), dilation=(dilation, dilation, 1)),
                *_norm_act(channels),
                nn.Dropout(drop),
            ]
        self.encoder = nn.Sequential(*encoder)

        decoder: list[nn.Module] = []
        for _ in range(cfg.pool_stages):
            decoder += [
                nn.ConvTranspose3d(channels, channels // 2, (4, 4, 3), stride=(2, 2, 1), padding=(1, 1, 1)),
                *_norm_act(channels // 2),
            ]
            channels //= 2
        decoder.append(nn.Conv3d(channels, 1, 3, padding=1))
        self.decoder = nn.Sequential(*decoder)

    @staticmethod
    def receptive_field(config: EBDConfig) -> int:
        """In-plane receptive field (pixels) of the encoder"""
        field, jump = 3, 1
        for _ in range(config.pool_stages):
            field += jump
            jump *= 2
            field += 2 * jump
        for dilation in config.dilations:
            field += 2 * dilation * jump
        return field

    def reconstruct(self, x: torch.Tensor) -> torch.Tensor:
        factor = 2 ** self.config.pool_stages
        h, w = x.shape[2], x.shape[3]
        padded = F.pad(x, (0, 0, 0, (-w) % factor, 0, (-h) % factor))
        return self.decoder(self.encoder(padded))[:, :, :h, :w]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (energy per sample (N,), reconstruction)"""
        if x.dim() != 5 or x.shape[1] != 1 or x.shape[-1] != NUM_VERTEBRAE:
            raise ShapeError(f"expected (N, 1, h, w, 26) input, got {tuple(x.shape)}")
        reconstruction = self.reconstruct(x)
        return reconstruction_energy(x, reconstruction), reconstruction


def reconstruction_energy(x: torch.Tensor, reconstruction: torch.Tensor) -> torch.Tensor:
    """Per-sample l2 norm of the reconstruction residual"""
    return (x - reconstruction).flatten(1).norm(p=2, dim=1)


class SpatialPyramidPool3d(nn.Module):
    """Max pools a (N, C, a, b, c) map onto fixed l x l x l grids and concatenates them"""

    def __init__(self, levels: tuple[int, ...] = (3, 4)):
        super().__init__()
        self.levels = tuple(levels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        pooled = [F.adaptive_max_pool3d(x, (level, level, level)).reshape(n, -1) for level in self.levels]
        return torch.cat(pooled, dim=1)


class WassersteinDiscriminator(nn.Module):
    """
    Critic mapping a heatmap stack to one unbounded real number.

    Strided 3D convolutions (no pooling, no dilation) with batch
    normalization, a final convolution to `final_feature_channels`, 3D
    spatial pyramid pooling to a fixed-length vector, and dense layers.
    """

    def __init__(self, config: Optional[WDConfig] = None):
        super().__init__()
        self.config = config or WDConfig()
        cfg = self.config
        channels = cfg.base_channels
        layers: list[nn.Module] = [nn.Conv3d(1, channels, 3, padding=1), *_norm_act(channels)]
        for _ in range(cfg.strided_stages):
            layers += [nn.Conv3d(channels, channels * 2, 3, stride=2, padding=1), *_norm_act(channels * 2)]
            channels *= 2
        layers += [nn.Conv3d(channels, cfg.final_feature_channels, 3, padding=1), *_norm_act(cfg.final_feature_channels)]
        self.encoder = nn.Sequential(*layers)
        self.spp = SpatialPyramidPool3d(cfg.spp_levels)
        self.head = nn.Sequential(
            nn.Linear(cfg.spp_length, cfg.dense_units),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(cfg.dense_units, 1),
        )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pyramid-pooled feature vector, (N, spp_length)"""
        if x.dim() != 5 or x.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, h, w, c) input, got {tuple(x.shape)}")
        if min(x.shape[2], x.shape[3]) < self.config.min_input_size:
            raise ShapeError(
                f"input {tuple(x.shape[2:])} is smaller than {self.config.min_input_size} px in-plane"
            )
        return self.spp(self.encoder(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Scores (N,)"""
        return self.head(self.features(x)).squeeze(1)
