"""U-Net flow estimator: two frames in, bidirectional flows + blend mask out.

Architecture (fixed up to `levels` / `base_channels`):
  * channels per level: min(base_channels * 2**i, 512)
  * stem at full resolution: Conv3x3 -> LReLU -> Conv3x3 -> LReLU
  * each encoder level: Conv3x3 stride 2 -> LReLU -> Conv3x3 -> LReLU
  * each decoder level: bilinear x2 upsample, concat skip,
    Conv3x3 -> LReLU -> Conv3x3 -> LReLU
  * 3x3 output head producing 5 channels: (f1t_x, f1t_y, f2t_x, f2t_y,
    mask logit); the mask goes through a sigmoid so it lands in (0, 1)

All convolutions use bias. Parameter count of a Conv2d(cin, cout, k) is
cin*cout*k*k + cout, which the tests recompute analytically.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.1
MAX_CHANNELS = 512


@dataclass
class FlowNetConfig:
    levels: int = 5
    base_channels: int = 32
    in_channels: int = 6
    out_channels: int = 5

    def validate(self) -> None:
        if self.levels < 3:
            raise ValueError(f"levels must be >= 3, got {self.levels}")
        if self.base_channels < 8:
            raise ValueError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def divisor(self) -> int:
        """Input H and W must be divisible by this."""
        return 2 ** (self.levels - 1)

    def level_channels(self) -> list[int]:
        return [min(self.base_channels * 2**i, MAX_CHANNELS) for i in range(self.levels)]


@dataclass
class FlowEstimate:
    """Bidirectional flows to the midpoint plus the blending mask.

    flow_1t / flow_2t: (B, 2, H, W); mask: (B, 1, H, W) in (0, 1).
    """

    flow_1t: torch.Tensor
    flow_2t: torch.Tensor
    mask: torch.Tensor


def _block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.LeakyReLU(LEAKY_SLOPE),
    )


class FlowUNet(nn.Module):
    def __init__(self, config: FlowNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        ch = config.level_channels()
        self.stem = _block(config.in_channels, ch[0])
        self.downs = nn.ModuleList(
            _block(ch[i - 1], ch[i], stride=2) for i in range(1, config.levels)
        )
        self.ups = nn.ModuleList(
            _block(ch[i + 1] + ch[i], ch[i]) for i in reversed(range(config.levels - 1))
        )
        self.head = nn.Conv2d(ch[0], config.out_channels, 3, padding=1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        div = self.config.divisor
        h, w = frames.shape[2:]
        if h % div or w % div:
            raise ValueError(
                f"input size {h}x{w} not divisible by {div} "
                f"(levels={self.config.levels}); no silent padding"
            )
        skips = [self.stem(frames)]
        x = skips[0]
        for down in self.downs:
            x = down(x)
            skips.append(x)
        for i, up in enumerate(self.ups):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = up(torch.cat([x, skips[-2 - i]], dim=1))
        return self.head(x)


def build_flow_estimator(config: FlowNetConfig, seed: int) -> FlowUNet:
    """Build a FlowUNet with deterministic initialization.

    Seeds the global torch RNG with `seed` before construction, so the same
    config + seed always yields identical parameters.
    """
    torch.manual_seed(seed)
    return FlowUNet(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def estimate(model: FlowUNet, frame1: torch.Tensor, frame2: torch.Tensor) -> FlowEstimate:
    """Predict bidirectional flows and blending mask for a frame pair.

    Frames are (B, 3, H, W) with H, W divisible per the model config.
    """
    if frame1.shape != frame2.shape:
        raise ValueError(f"frame shapes differ: {tuple(frame1.shape)} vs {tuple(frame2.shape)}")
    out = model(torch.cat([frame1, frame2], dim=1))
    return FlowEstimate(
        flow_1t=out[:, 0:2],
        flow_2t=out[:, 2:4],
        mask=torch.sigmoid(out[:, 4:5]),
    )
