from typing import Optional

import torch
from torch import nn

from btrfly.core.exceptions import ShapeError
from btrfly.schemas.network import LocalizerConfig


class ConvBlock3d(nn.Sequential):

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm3d(out_channels),
            nn.ReLU(inplace=True),
        )


class SpineLocalizerNet(nn.Module):
    """
    Light-weight 3D U-network regressing a spine heatmap in [0, 1].

    3x3x3 convolutions, 2x2x2 average pooling with stride 2, 4x4x4
    transposed convolutions on the way up, a 1x1x1 output convolution and a sigmoid.
    """

    def __init__(self, config: Optional[LocalizerConfig] = None):
        super().__init__()
        self.config = config or LocalizerConfig()
        cfg = self.config
        widths = [cfg.base_filters * 2 ** i for i in range(cfg.depth + 1)]

        self.down = nn.ModuleList([ConvBlock3d(1, widths[0])])
        for i in range(1, cfg.depth + 1):
            self.down.append(ConvBlock3d(widths[i - 1], widths[i]))
        self.pool = nn.AvgPool3d(2, stride=2)

        self.up = nn.ModuleList()
        self.merge = nn.ModuleList()
        for i in range(cfg.depth, 0, -1):
            self.up.append(nn.ConvTranspose3d(widths[i], widths[i - 1], 4, stride=2, padding=1))
            self.merge.append(ConvBlock3d(2 * widths[i - 1], widths[i - 1]))
        self.head = nn.Conv3d(widths[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5 or x.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, h, w, d) input, got {tuple(x.shape)}")
        factor = self.config.downsampling
        if any(n % factor for n in x.shape[2:]):
            raise ShapeError(f"dims {tuple(x.shape[2:])} must be divisible by {factor}")
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else self.pool(x))
            skips.append(x)
        skips.pop()
        for up, merge in zip(self.up, self.merge):
            x = merge(torch.cat([up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))
