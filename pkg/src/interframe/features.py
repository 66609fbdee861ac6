"""Frozen feature extractors for synthesis inputs and the perceptual loss.

Two sources:
  * "fixed-random-conv": a small randomly initialized conv stack, frozen at
    construction. Hermetic (no downloads); the default for tests and toy
    training runs.
  * "pretrained-classifier-early-layers": a slice of torchvision's VGG16
    `features` trunk (requires the optional torchvision dependency and
    downloaded weights). `layer_index` selects the slice end; the default 9
    stops after the second pooling stage, which is what the synthesis module
    wants, while the perceptual loss typically uses a deeper slice (23 ends
    right before the fourth pooling stage).

Either way the extractor is frozen: parameters never receive gradients, but
gradients w.r.t. the input image flow through. Output is bilinearly resized
back to the input resolution so it can be warped and concatenated alongside
images.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

SOURCES = ("fixed-random-conv", "pretrained-classifier-early-layers")


@dataclass
class FeatureExtractorConfig:
    source: str = "fixed-random-conv"
    out_channels: int = 16
    stride: int = 2  # internal downsampling factor for the random stack; power of 2
    seed: int = 0
    layer_index: int = 9  # pretrained source only: end of the VGG16 features slice

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown extractor source {self.source!r}; expected one of {SOURCES}")
        if self.out_channels < 1:
            raise ValueError("out_channels must be positive")
        if self.stride < 1 or (self.stride & (self.stride - 1)):
            raise ValueError(f"stride must be a power of two, got {self.stride}")


class FeatureExtractor(nn.Module):
    """Frozen feature stack whose output is resized to the input resolution."""

    def __init__(self, config: FeatureExtractorConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.source == "fixed-random-conv":
            torch.manual_seed(config.seed)
            layers: list[nn.Module] = []
            cin = 3
            stride_left = config.stride
            mid = max(config.out_channels, 8)
            while stride_left > 1:
                layers += [nn.Conv2d(cin, mid, 3, stride=2, padding=1), nn.LeakyReLU(0.1)]
                cin = mid
                stride_left //= 2
            layers += [nn.Conv2d(cin, config.out_channels, 3, padding=1), nn.LeakyReLU(0.1)]
            self.body = nn.Sequential(*layers)
        else:
            self.body = _vgg_slice(config.layer_index)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):  # noqa: D102 - extractor is permanently frozen
        return super().train(False)

    @property
    def out_channels(self) -> int:
        for m in reversed(list(self.body.modules())):
            if isinstance(m, nn.Conv2d):
                return m.out_channels
        raise RuntimeError("extractor has no conv layers")

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        feats = self.body(image)
        if feats.shape[2:] != image.shape[2:]:
            feats = F.interpolate(feats, size=image.shape[2:], mode="bilinear", align_corners=False)
        return feats


def _vgg_slice(layer_index: int) -> nn.Module:
    try:
        from torchvision.models import VGG16_Weights, vgg16
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise RuntimeError(
            "pretrained extractor requires torchvision; install the 'pretrained' extra"
        ) from exc
    trunk = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
    return nn.Sequential(*list(trunk.children())[:layer_index])


def build_feature_extractor(config: FeatureExtractorConfig) -> FeatureExtractor:
    return FeatureExtractor(config)


def extract_features(extractor: FeatureExtractor, image: torch.Tensor) -> torch.Tensor:
    """Run the frozen extractor on an RGB image batch (B, 3, H, W) in [0, 1]."""
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
    return extractor(image)
