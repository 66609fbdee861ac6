"""Spectrally normalized patch discriminator for RoI patches.

Every conv/linear layer divides its weight by a power-iteration estimate of
the top singular value before use, bounding the layer's Lipschitz constant
near 1. The left-singular-vector estimate `u` is a buffer updated only in
training mode, so the trainer can freeze it (module.eval()) while scoring
patches for the generator update.

Architecture for 64x64x3 patches: five stride-2 4x4 convolutions doubling
channels from `base_channels` up to a 512 cap, LeakyReLU(0.2) activations,
then a linear head on the flattened 2x2 feature map producing one unbounded
score per patch.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .roi import PatchPair

MAX_CHANNELS = 512
SIGMA_FLOOR = 1e-12


def spectral_normalize(
    weight: torch.Tensor, u: torch.Tensor, iters: int = 1
) -> tuple[torch.Tensor, torch.Tensor]:
    """Divide `weight` by its estimated top singular value.

    Runs `iters` power-iteration steps on the (out, in*k*k) reshape of the
    weight starting from left-singular estimate `u`, then normalizes. The
    singular vectors are treated as constants, so the returned weight is
    differentiable w.r.t. the input weight only. sigma is floored to avoid
    dividing by zero for the all-zero weight.

    Returns (normalized weight, updated u).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if u.numel() != weight.shape[0]:
        raise ValueError(f"u has {u.numel()} elements, expected {weight.shape[0]}")
    w = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        u = F.normalize(u.reshape(-1), dim=0, eps=SIGMA_FLOOR)
        for _ in range(iters):
            v = F.normalize(w.t().mv(u), dim=0, eps=SIGMA_FLOOR)
            u = F.normalize(w.mv(v), dim=0, eps=SIGMA_FLOOR)
    sigma = torch.dot(u, w.mv(v)).clamp_min(SIGMA_FLOOR)
    return weight / sigma, u


class SpectralNorm(nn.Module):
    """Wrap a conv/linear module, normalizing its weight on every forward."""

    def __init__(self, module: nn.Module, power_iterations: int = 1):
        super().__init__()
        self.module = module
        self.power_iterations = power_iterations
        self.register_buffer("u", torch.randn(module.weight.shape[0]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w_norm, u = spectral_normalize(self.module.weight, self.u, self.power_iterations)
        if self.training:
            self.u.copy_(u)
        m = self.module
        if isinstance(m, nn.Conv2d):
            return F.conv2d(x, w_norm, m.bias, m.stride, m.padding)
        return F.linear(x, w_norm, m.bias)


class PatchDiscriminator(nn.Module):
    def __init__(self, patch_size: int = 64, base_channels: int = 64, in_channels: int = 3):
        super().__init__()
        if patch_size % 32:
            raise ValueError(f"patch_size must be divisible by 32, got {patch_size}")
        self.patch_size = patch_size
        chans = [in_channels] + [min(base_channels * 2**i, MAX_CHANNELS) for i in range(5)]
        self.convs = nn.ModuleList(
            SpectralNorm(nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1))
            for i in range(5)
        )
        tail = patch_size // 32
        self.head = SpectralNorm(nn.Linear(chans[-1] * tail * tail, 1))

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.dim() != 4 or patches.shape[2:] != (self.patch_size, self.patch_size):
            raise ValueError(
                f"expected (N, C, {self.patch_size}, {self.patch_size}) patches, "
                f"got {tuple(patches.shape)}"
            )
        x = patches
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).reshape(-1)


def build_discriminator(
    patch_size: int = 64, base_channels: int = 64, seed: int = 0
) -> PatchDiscriminator:
    torch.manual_seed(seed)
    return PatchDiscriminator(patch_size=patch_size, base_channels=base_channels)


def discriminate(disc: PatchDiscriminator, patches) -> torch.Tensor:
    """Score a batch of patches; accepts a (N, C, h, w) tensor or a list of
    (C, h, w) patches / PatchPair fake sides. Returns one score per patch."""
    if isinstance(patches, torch.Tensor):
        batch = patches
    else:
        items = [p.fake if isinstance(p, PatchPair) else p for p in patches]
        if not items:
            raise ValueError("no patches to score")
        batch = torch.stack(items)
    return disc(batch)
