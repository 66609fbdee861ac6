"""Warp-and-refine synthesis of the middle frame.

The warping stage blends the two input frames (and their frozen feature
maps) to the midpoint using the estimated flows and mask. The refinement
head then concatenates the warped image and warped features and applies
three 9x9 convolutions, predicting a residual on top of the warped image:

    refined = warped + head([warped_image, warped_features])

With the final head layer zero-initialized (the default) the refinement is
exactly the identity at step 0, which keeps early training stable and makes
the residual path testable.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import FeatureExtractor, extract_features
from .flow_net import FlowEstimate, FlowUNet, estimate
from .warping import blend_warp


@dataclass
class SynthesisConfig:
    hidden_channels: int = 64
    kernel_size: int = 9
    zero_init_last: bool = True


@dataclass
class SynthesisOutput:
    """warped = flow-blended image; refined = warped + learned residual.

    `refined` is left unclamped so losses see raw values; clamp to [0, 1]
    with `refined_clamped()` when writing images.
    """

    warped: torch.Tensor
    refined: torch.Tensor

    def refined_clamped(self) -> torch.Tensor:
        return self.refined.clamp(0.0, 1.0)


class SynthesisHead(nn.Module):
    def __init__(self, feature_channels: int, config: SynthesisConfig | None = None):
        super().__init__()
        config = config or SynthesisConfig()
        self.config = config
        k, pad = config.kernel_size, config.kernel_size // 2
        hidden = config.hidden_channels
        self.conv1 = nn.Conv2d(3 + feature_channels, hidden, k, padding=pad)
        self.conv2 = nn.Conv2d(hidden, hidden, k, padding=pad)
        self.conv3 = nn.Conv2d(hidden, 3, k, padding=pad)
        if config.zero_init_last:
            nn.init.zeros_(self.conv3.weight)
            nn.init.zeros_(self.conv3.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(x), 0.1)
        x = F.leaky_relu(self.conv2(x), 0.1)
        return self.conv3(x)


def build_synthesis_head(
    feature_channels: int, config: SynthesisConfig | None = None, seed: int = 0
) -> SynthesisHead:
    torch.manual_seed(seed)
    return SynthesisHead(feature_channels, config)


def synthesize(
    head: SynthesisHead,
    frame1: torch.Tensor,
    frame2: torch.Tensor,
    feats1: torch.Tensor,
    feats2: torch.Tensor,
    est: FlowEstimate,
) -> SynthesisOutput:
    """Blend-warp images and features to the midpoint, then refine.

    All inputs are (B, C, H, W) with matching batch and spatial sizes.
    """
    if frame1.shape != frame2.shape or feats1.shape != feats2.shape:
        raise ValueError("frame or feature shapes disagree between the two streams")
    if frame1.shape[2:] != feats1.shape[2:]:
        raise ValueError(
            f"features {tuple(feats1.shape)} not at image resolution {tuple(frame1.shape)}"
        )
    warped_img = blend_warp(frame1, frame2, est.flow_1t, est.flow_2t, est.mask)
    warped_feat = blend_warp(feats1, feats2, est.flow_1t, est.flow_2t, est.mask)
    residual = head(torch.cat([warped_img, warped_feat], dim=1))
    return SynthesisOutput(warped=warped_img, refined=warped_img + residual)


def generator_forward(
    flow_model: FlowUNet,
    head: SynthesisHead,
    extractor: FeatureExtractor,
    frame1: torch.Tensor,
    frame2: torch.Tensor,
) -> tuple[FlowEstimate, SynthesisOutput]:
    """Full interpolation pipeline: estimate flows, extract features, synthesize."""
    est = estimate(flow_model, frame1, frame2)
    feats1 = extract_features(extractor, frame1)
    feats2 = extract_features(extractor, frame2)
    return est, synthesize(head, frame1, frame2, feats1, feats2, est)
