import pytest
import torch

from interframe.warping import bilinear_sample, blend_warp

from fd import check_gradients, weighted_sum


def safe_flow(h: int, w: int, b: int = 1, gen: torch.Generator | None = None) -> torch.Tensor:
    """Flow whose absolute sample coords stay inside the image with fractional
    parts in [0.1, 0.9], so central differences never cross a cell boundary."""
    ix = torch.randint(0, w - 1, (b, h, w), generator=gen).double()
    iy = torch.randint(0, h - 1, (b, h, w), generator=gen).double()
    fx = 0.1 + 0.8 * torch.rand(b, h, w, generator=gen, dtype=torch.float64)
    fy = 0.1 + 0.8 * torch.rand(b, h, w, generator=gen, dtype=torch.float64)
    xs = torch.arange(w, dtype=torch.float64).view(1, 1, w)
    ys = torch.arange(h, dtype=torch.float64).view(1, h, 1)
    return torch.stack([ix + fx - xs, iy + fy - ys], dim=1)


def test_zero_flow_is_identity():
    gen = torch.Generator().manual_seed(0)
    img = torch.rand(2, 3, 7, 9, generator=gen)
    out = bilinear_sample(img, torch.zeros(2, 2, 7, 9))
    assert (out - img).abs().max().item() < 1e-6


def test_integer_flow_is_a_shift():
    gen = torch.Generator().manual_seed(1)
    img = torch.rand(1, 1, 5, 8, generator=gen)
    flow = torch.zeros(1, 2, 5, 8)
    flow[:, 0] = 2.0  # sample 2 px to the right
    out = bilinear_sample(img, flow)
    assert torch.equal(out[..., :, : 8 - 2], img[..., :, 2:])


def test_out_of_range_clamps_to_border():
    img = torch.arange(12.0).reshape(1, 1, 3, 4)
    flow = torch.full((1, 2, 3, 4), 100.0)
    out = bilinear_sample(img, flow)
    assert torch.all(out == img[0, 0, -1, -1])
    out = bilinear_sample(img, -flow)
    assert torch.all(out == img[0, 0, 0, 0])


def test_quarter_pixel_analytic_value():
    img = torch.tensor([[[[0.0, 1.0], [2.0, 3.0]]]])
    flow = torch.zeros(1, 2, 2, 2)
    flow[0, 0, 0, 0] = 0.25  # x = 0.25, y = 0
    flow[0, 1, 0, 0] = 0.5  # -> y = 0.5 at the same output pixel
    out = bilinear_sample(img, flow)
    # bilinear at (x=0.25, y=0.5): 0.75*(0.5*0+0.5*2) + 0.25*(0.5*1+0.5*3)
    assert abs(out[0, 0, 0, 0].item() - 1.25) < 1e-6


def test_shape_and_validation_errors():
    img = torch.zeros(1, 3, 4, 4)
    with pytest.raises(ValueError):
        bilinear_sample(img, torch.zeros(1, 3, 4, 4))  # 3 flow channels
    with pytest.raises(ValueError):
        bilinear_sample(img, torch.zeros(1, 2, 4, 5))  # spatial mismatch
    bad = torch.zeros(1, 2, 4, 4)
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        bilinear_sample(img, bad)
    with pytest.raises(ValueError):
        blend_warp(img, img, torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 4),
                   torch.full((1, 1, 4, 4), 1.5))


def test_blend_mask_extremes():
    gen = torch.Generator().manual_seed(2)
    a = torch.rand(1, 3, 6, 6, generator=gen)
    b = torch.rand(1, 3, 6, 6, generator=gen)
    fa = safe_flow(6, 6, gen=gen).float()
    fb = safe_flow(6, 6, gen=gen).float()
    ones = torch.ones(1, 1, 6, 6)
    out_a = blend_warp(a, b, fa, fb, ones)
    assert torch.equal(out_a, bilinear_sample(a, fa))
    out_b = blend_warp(a, b, fa, fb, torch.zeros_like(ones))
    assert torch.equal(out_b, bilinear_sample(b, fb))


def test_blend_is_convex_combination():
    gen = torch.Generator().manual_seed(3)
    a = torch.rand(1, 3, 5, 5, generator=gen)
    b = torch.rand(1, 3, 5, 5, generator=gen)
    fa = safe_flow(5, 5, gen=gen).float()
    fb = safe_flow(5, 5, gen=gen).float()
    mask = torch.rand(1, 1, 5, 5, generator=gen)
    out = blend_warp(a, b, fa, fb, mask)
    expect = mask * bilinear_sample(a, fa) + (1 - mask) * bilinear_sample(b, fb)
    assert (out - expect).abs().max().item() < 1e-6


def test_image_gradient_matches_fd():
    gen = torch.Generator().manual_seed(4)
    for _ in range(5):
        img = torch.rand(1, 2, 4, 5, generator=gen, dtype=torch.float64)
        flow = safe_flow(4, 5, gen=gen)
        w = torch.randn(1, 2, 4, 5, generator=gen, dtype=torch.float64)
        reduce = weighted_sum(w)
        err = check_gradients(lambda i, f: reduce(bilinear_sample(i, f)), [img, flow], [0])
        assert err < 1e-4


def test_flow_gradient_matches_fd():
    gen = torch.Generator().manual_seed(5)
    for _ in range(5):
        img = torch.rand(1, 2, 4, 5, generator=gen, dtype=torch.float64)
        flow = safe_flow(4, 5, gen=gen)
        w = torch.randn(1, 2, 4, 5, generator=gen, dtype=torch.float64)
        reduce = weighted_sum(w)
        err = check_gradients(lambda i, f: reduce(bilinear_sample(i, f)), [img, flow], [1])
        assert err < 1e-4


def test_blend_warp_gradients_match_fd():
    gen = torch.Generator().manual_seed(6)
    for _ in range(3):
        a = torch.rand(1, 2, 4, 4, generator=gen, dtype=torch.float64)
        b = torch.rand(1, 2, 4, 4, generator=gen, dtype=torch.float64)
        fa = safe_flow(4, 4, gen=gen)
        fb = safe_flow(4, 4, gen=gen)
        mask = (0.1 + 0.8 * torch.rand(1, 1, 4, 4, generator=gen)).double()
        w = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64)
        reduce = weighted_sum(w)
        err = check_gradients(
            lambda *args: reduce(blend_warp(*args)), [a, b, fa, fb, mask], [0, 1, 2, 3, 4]
        )
        assert err < 1e-4
