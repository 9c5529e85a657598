"""Butterfly labeller: two 2D U-arms (sagittal, coronal) joined at the bottleneck."""
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from btrfly.core.exceptions import ShapeError
from btrfly.schemas.network import BtrflyConfig


class ConvBlock(nn.Sequential):
    """3x3 convolution, batch normalization, ReLU"""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, groups: int = 1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, groups=groups, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class UpBlock(nn.Module):
    """4x4 transposed convolution (x2), concatenation with the skip, 3x3 convolution"""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.Sequential(
            nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )
        self.fuse = ConvBlock(out_channels + skip_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.fuse(torch.cat([self.up(x), skip], dim=1))


class EncoderArm(nn.Module):
    """Full-resolution stem followed by stride-2 stages; returns every stage output"""

    def __init__(self, in_channels: int, base_filters: int, stages: int):
        super().__init__()
        self.stem = nn.Sequential(ConvBlock(in_channels, base_filters), ConvBlock(base_filters, base_filters))
        self.stages = nn.ModuleList()
        channels = base_filters
        for _ in range(stages):
            self.stages.append(nn.Sequential(ConvBlock(channels, channels * 2, stride=2), ConvBlock(channels * 2, channels * 2)))
            channels *= 2
        self.out_channels = channels

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        features = [self.stem(x)]
        for stage in self.stages:
            features.append(stage(features[-1]))
        return features


class DecoderArm(nn.Module):

    def __init__(self, in_channels: int, base_filters: int, stages: int, out_channels: int):
        super().__init__()
        skip_channels = [base_filters * 2 ** i for i in range(stages)]
        self.ups = nn.ModuleList()
        channels = in_channels
        for skip in reversed(skip_channels):
            self.ups.append(UpBlock(channels, skip, skip))
            channels = skip
        # linear output: the l2 term regresses values, the softmax term reads raw scores
        self.head = nn.Conv2d(channels, out_channels, 1)

    def forward(self, x: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        for up, skip in zip(self.ups, reversed(skips)):
            x = up(x, skip)
        return self.head(x)


class DualInputStem(nn.Module):
    """Separate 3x3 convolutions for the localized MIP and the meanIP, concatenated"""

    def __init__(self, filters: int):
        super().__init__()
        self.mip = nn.Conv2d(1, filters, 3, padding=1)
        self.mean = nn.Conv2d(1, filters, 3, padding=1)

    def forward(self, mip: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.mip(mip), self.mean(mean)], dim=1)


def channel_shuffle(x: torch.Tensor, groups: int) -> torch.Tensor:
    n, c, h, w = x.shape
    return x.view(n, groups, c // groups, h, w).transpose(1, 2).reshape(n, c, h, w)


class BtrflyNet(nn.Module):
    """
    Maps (sagittal h x w, coronal h x d) reformations to two 27-channel heatmaps.

    Each arm runs `encoder_stages` stride-2 stages and projects to half the
    bottleneck width. In the butterfly the two halves are concatenated,
    channel-shuffled and processed by a two-group convolution, so every
    output channel sees both views; the result is split back into one half
    per decoder. The Cor.+Sag. baseline (``arms_fused=False``) replaces that
    layer with one ungrouped convolution per arm, which gives both variants
    exactly the same number of parameters.

    After the shuffle each group holds alternating channels of both views, so
    a fused output channel sees half of the sagittal and half of the coronal
    channels rather than the full concatenation. Convolving the whole
    concatenation would mix more but would double the joint layer's weights
    and break parity with the baseline.
    """

    def __init__(self, config: Optional[BtrflyConfig] = None):
        super().__init__()
        self.config = config or BtrflyConfig()
        cfg = self.config
        half = cfg.arm_bottleneck_channels
        in_channels = 1
        if cfg.dual_input:
            self.sag_stem = DualInputStem(cfg.dual_input_filters)
            self.cor_stem = DualInputStem(cfg.dual_input_filters)
            in_channels = 2 * cfg.dual_input_filters

        self.sag_encoder = EncoderArm(in_channels, cfg.base_filters, cfg.encoder_stages)
        self.cor_encoder = EncoderArm(in_channels, cfg.base_filters, cfg.encoder_stages)
        deepest = self.sag_encoder.out_channels
        self.sag_project = ConvBlock(deepest, half)
        self.cor_project = ConvBlock(deepest, half)
        if cfg.arms_fused:
            self.joint = ConvBlock(2 * half, 2 * half, groups=2)
        else:
            self.sag_bottleneck = ConvBlock(half, half)
            self.cor_bottleneck = ConvBlock(half, half)
        self.sag_decoder = DecoderArm(half, cfg.base_filters, cfg.encoder_stages, cfg.out_channels)
        self.cor_decoder = DecoderArm(half, cfg.base_filters, cfg.encoder_stages, cfg.out_channels)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    def check_shapes(self, sag: torch.Tensor, cor: torch.Tensor) -> None:
        """
        Raises:
            ShapeError: inputs not (N, C, h, w) / (N, C, h, d), heights differ,
                dims not divisible by the downsampling factor, or w != d when fused
        """
        cfg = self.config
        if sag.dim() != 4 or cor.dim() != 4:
            raise ShapeError(f"expected (N, C, H, W) inputs, got {tuple(sag.shape)} and {tuple(cor.shape)}")
        (_, _, h, w), (_, _, h_cor, d) = sag.shape, cor.shape
        if h != h_cor:
            raise ShapeError(f"sagittal height {h} differs from coronal height {h_cor}")
        factor = cfg.downsampling
        if any(n % factor for n in (h, w, d)):
            raise ShapeError(f"dims {(h, w, d)} must be divisible by {factor}; pad the inputs")
        if cfg.arms_fused and w != d:
            raise ShapeError(f"butterfly fusion needs w == d, got {w} and {d}")
        if cfg.input_dims is not None and ((h, w), (h, d)) != tuple(map(tuple, cfg.input_dims)):
            raise ShapeError(f"inputs {(h, w)}/{(h, d)} do not match configured {cfg.input_dims}")

    def _encode(
        self,
        sag: torch.Tensor,
        cor: torch.Tensor,
        sag_mean: Optional[torch.Tensor],
        cor_mean: Optional[torch.Tensor],
    ):
        if self.config.dual_input:
            if sag_mean is None or cor_mean is None:
                raise ShapeError("dual-input network needs meanIP reformations for both views")
            if sag_mean.shape != sag.shape or cor_mean.shape != cor.shape:
                raise ShapeError("paired reformations of a view must share dimensions")
        self.check_shapes(sag, cor)
        if self.config.dual_input:
            sag = self.sag_stem(sag, sag_mean)
            cor = self.cor_stem(cor, cor_mean)
        sag_features = self.sag_encoder(sag)
        cor_features = self.cor_encoder(cor)
        sag_half = self.sag_project(sag_features[-1])
        cor_half = self.cor_project(cor_features[-1])
        if self.config.arms_fused:
            fused = self.joint(channel_shuffle(torch.cat([sag_half, cor_half], dim=1), 2))
            half = self.config.arm_bottleneck_channels
            bottleneck = (fused,)
            sag_half, cor_half = fused[:, :half], fused[:, half:]
        else:
            sag_half = self.sag_bottleneck(sag_half)
            cor_half = self.cor_bottleneck(cor_half)
            bottleneck = (sag_half, cor_half)
        return sag_features, cor_features, sag_half, cor_half, bottleneck

    def forward(
        self,
        sag: torch.Tensor,
        cor: torch.Tensor,
        sag_mean: Optional[torch.Tensor] = None,
        cor_mean: Optional[torch.Tensor] = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (sagittal, coronal) raw heatmaps of shape (N, 27, h, w) and (N, 27, h, d)"""
        sag_features, cor_features, sag_half, cor_half, _ = self._encode(sag, cor, sag_mean, cor_mean)
        sag_out = self.sag_decoder(sag_half, sag_features[:-1])
        cor_out = self.cor_decoder(cor_half, cor_features[:-1])
        return sag_out, cor_out

    def forward_dual_input(
        self,
        sag_mip: torch.Tensor,
        sag_meanip: torch.Tensor,
        cor_mip: torch.Tensor,
        cor_meanip: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if not self.config.dual_input:
            raise ShapeError("network was not built with dual_input")
        return self.forward(sag_mip, cor_mip, sag_meanip, cor_meanip)

    @torch.no_grad()
    def latent_code(
        self,
        sag: torch.Tensor,
        cor: torch.Tensor,
        sag_mean: Optional[torch.Tensor] = None,
        cor_mean: Optional[torch.Tensor] = None,
    ) -> tuple[torch.Tensor, ...]:
        """
        Channel-wise global mean of the bottleneck response.

        One (N, bottleneck_channels) code for the butterfly; a
        (sagittal, coronal) pair of (N, bottleneck_channels / 2) codes for the baseline.
        """
        *_, bottleneck = self._encode(sag, cor, sag_mean, cor_mean)
        return tuple(F.adaptive_avg_pool2d(b, 1).flatten(1) for b in bottleneck)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
