"""Differentiable backward warping and two-stream blending.

Conventions used throughout the package:
  * tensors are (B, C, H, W) float tensors
  * flow fields are (B, 2, H, W), channel 0 = x displacement, channel 1 = y
    displacement, in pixels
  * backward warping: output(p) = input(p + flow(p))
  * pixel (i, j) sits at continuous coordinate (i, j); sampling coordinates
    outside the image are clamped to the border
"""

import torch


def _check_warp_shapes(image: torch.Tensor, flow: torch.Tensor) -> None:
    if image.dim() != 4 or flow.dim() != 4:
        raise ValueError(
            f"expected 4D (B,C,H,W) tensors, got image {tuple(image.shape)}, "
            f"flow {tuple(flow.shape)}"
        )
    if flow.shape[1] != 2:
        raise ValueError(f"flow must have 2 channels, got {flow.shape[1]}")
    if image.shape[0] != flow.shape[0] or image.shape[2:] != flow.shape[2:]:
        raise ValueError(
            f"image {tuple(image.shape)} and flow {tuple(flow.shape)} disagree "
            "on batch or spatial size"
        )
    if not torch.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")


def bilinear_sample(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp `image` by `flow` with bilinear interpolation.

    output(p) = image(p + flow(p)), sampled bilinearly with clamp-to-edge
    border handling. Differentiable w.r.t. both the image values and the
    flow values (the flow gradient is zero where the sample coordinate is
    clamped outside the image).

    Args:
        image: (B, C, H, W)
        flow: (B, 2, H, W) pixel displacements (dx, dy)

    Returns:
        (B, C, H, W) warped tensor.
    """
    _check_warp_shapes(image, flow)
    b, c, h, w = image.shape
    device, dtype = image.device, image.dtype

    ys = torch.arange(h, device=device, dtype=dtype).view(1, h, 1)
    xs = torch.arange(w, device=device, dtype=dtype).view(1, 1, w)
    x = (xs + flow[:, 0]).clamp(0, w - 1)  # (B, H, W)
    y = (ys + flow[:, 1]).clamp(0, h - 1)

    x0 = x.floor()
    y0 = y.floor()
    wx = x - x0  # carries the flow gradient; floor() has zero gradient
    wy = y - y0

    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)

    flat = image.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    v00 = gather(y0i, x0i)
    v01 = gather(y0i, x1i)
    v10 = gather(y1i, x0i)
    v11 = gather(y1i, x1i)

    wx = wx.unsqueeze(1)
    wy = wy.unsqueeze(1)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


def blend_warp(
    a: torch.Tensor,
    b_img: torch.Tensor,
    flow_a: torch.Tensor,
    flow_b: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Warp two streams and blend them with a per-pixel mask.

    Returns mask * warp(a, flow_a) + (1 - mask) * warp(b_img, flow_b).
    Applies identically to images and feature maps.

    Args:
        a, b_img: (B, C, H, W)
        flow_a, flow_b: (B, 2, H, W)
        mask: (B, 1, H, W), every element in [0, 1]

    Returns:
        (B, C, H, W) blended warp.
    """
    if a.shape != b_img.shape:
        raise ValueError(f"stream shapes differ: {tuple(a.shape)} vs {tuple(b_img.shape)}")
    if mask.dim() != 4 or mask.shape[1] != 1 or mask.shape[2:] != a.shape[2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} incompatible with {tuple(a.shape)}")
    if mask.numel() and (mask.min() < 0 or mask.max() > 1):
        raise ValueError("mask values must lie in [0, 1]")
    return mask * bilinear_sample(a, flow_a) + (1.0 - mask) * bilinear_sample(b_img, flow_b)
