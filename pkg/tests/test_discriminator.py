import numpy as np
import pytest
import torch

from interframe.discriminator import (
    PatchDiscriminator,
    SpectralNorm,
    build_discriminator,
    discriminate,
    spectral_normalize,
)
from interframe.roi import PatchPair


def top_singular_value(weight: torch.Tensor) -> float:
    mat = weight.detach().reshape(weight.shape[0], -1).numpy()
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def test_spectral_normalize_matches_svd_oracle():
    rng = np.random.default_rng(0)
    shapes = [(4, 7), (16, 3), (8, 3, 4, 4), (32, 16, 3, 3), (5, 5), (12, 6, 1, 1)]
    for shape in shapes:
        w = torch.tensor(rng.normal(size=shape), dtype=torch.float64)
        u = torch.tensor(rng.normal(size=shape[0]), dtype=torch.float64)
        w_norm, u = spectral_normalize(w, u, iters=200)
        assert abs(top_singular_value(w_norm) - 1.0) < 1e-3, shape


def test_spectral_normalize_scale_invariance_of_direction():
    gen = torch.Generator().manual_seed(1)
    w = torch.randn(6, 9, generator=gen, dtype=torch.float64)
    u = torch.randn(6, generator=gen, dtype=torch.float64)
    n1, _ = spectral_normalize(w, u, iters=100)
    n2, _ = spectral_normalize(3.0 * w, u, iters=100)
    assert (n1 - n2).abs().max().item() < 1e-9


def test_spectral_normalize_zero_weight_survives():
    w = torch.zeros(3, 5)
    u = torch.ones(3)
    w_norm, _ = spectral_normalize(w, u)
    assert torch.all(w_norm == 0.0)


def test_spectral_normalize_validation():
    w = torch.randn(3, 5)
    with pytest.raises(ValueError):
        spectral_normalize(w, torch.randn(4))
    with pytest.raises(ValueError):
        spectral_normalize(w, torch.randn(3), iters=0)


def test_spectral_normalize_gradient_only_through_weight():
    w = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
    u = torch.randn(4, dtype=torch.float64)
    w_norm, _ = spectral_normalize(w, u, iters=50)
    w_norm.sum().backward()
    assert w.grad is not None and torch.isfinite(w.grad).all()


def test_wrapper_updates_u_only_in_training_mode():
    layer = SpectralNorm(torch.nn.Linear(8, 4))
    x = torch.randn(2, 8)
    layer.train()
    before = layer.u.clone()
    layer(x)
    after_train = layer.u.clone()
    assert not torch.equal(before, after_train)
    layer.eval()
    layer(x)
    assert torch.equal(layer.u, after_train)


def test_wrapper_output_uses_normalized_weight():
    torch.manual_seed(2)
    lin = torch.nn.Linear(6, 3, bias=False)
    with torch.no_grad():
        lin.weight.mul_(10.0)
    layer = SpectralNorm(lin, power_iterations=100)
    layer.eval()
    for _ in range(50):  # converge u once in train mode
        layer.train()
        layer(torch.randn(1, 6))
    layer.eval()
    x = torch.randn(4, 6)
    out = layer(x)
    w_norm, _ = spectral_normalize(lin.weight, layer.u, 100)
    assert (out - x @ w_norm.t()).abs().max() < 1e-5


def test_discriminator_shape_contract():
    disc = build_discriminator(patch_size=64, base_channels=8, seed=0)
    scores = disc(torch.rand(3, 3, 64, 64))
    assert scores.shape == (3,)
    with pytest.raises(ValueError):
        disc(torch.rand(3, 3, 32, 32))
    with pytest.raises(ValueError):
        PatchDiscriminator(patch_size=48)


def test_discriminator_lipschitz_probe():
    # after u converges, small input perturbations cannot be amplified much:
    # five 1-Lipschitz-ish convs + LReLU(0.2) + linear head
    disc = build_discriminator(patch_size=64, base_channels=8, seed=3)
    x = torch.rand(1, 3, 64, 64)
    disc.train()
    for _ in range(100):
        disc(x)
    disc.eval()
    gen = torch.Generator().manual_seed(4)
    worst = 0.0
    with torch.no_grad():
        base = disc(x)
        for _ in range(10):
            d = torch.randn(x.shape, generator=gen)
            d = 1e-3 * d / d.norm()
            worst = max(worst, abs(float(disc(x + d) - base)) / 1e-3)
    # generous bound: the product of per-layer norms stays O(1), far from
    # the unnormalized network's scale
    assert worst < 10.0


def test_build_discriminator_deterministic():
    a = build_discriminator(base_channels=8, seed=5)
    b = build_discriminator(base_channels=8, seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_discriminate_accepts_lists_and_pairs():
    disc = build_discriminator(base_channels=8, seed=6)
    disc.eval()
    patches = [torch.rand(3, 64, 64) for _ in range(2)]
    stacked = disc(torch.stack(patches))
    as_list = discriminate(disc, patches)
    as_pairs = discriminate(disc, [PatchPair(fake=p, real=torch.zeros_like(p)) for p in patches])
    assert torch.equal(stacked, as_list)
    assert torch.equal(stacked, as_pairs)
    with pytest.raises(ValueError):
        discriminate(disc, [])
