"""Image quality metrics and trimap-band evaluation.

All metric functions take (H, W, C) or (H, W) float arrays in [0, 1] and an
optional boolean mask restricting which pixels count.

  * interpolation_error: RMS pixel difference on the 0-255 scale
  * psnr: 10*log10(1 / MSE), capped for identical images
  * ssim: mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, computed per channel and averaged; only window positions fully
    inside the image contribute, and a mask selects window centers

`evaluate` compares a directory of predicted frames against ground truth,
optionally restricted to segmentation-mask regions dilated by a set of
trimap widths, and aggregates per-frame and mean rows.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .data import load_image

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None) -> np.ndarray | None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        if mask.shape != a.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
        mask = mask.astype(bool)
        if not mask.any():
            raise ValueError("mask selects no pixels")
    return mask


def _masked(values: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return values.reshape(-1)
    return values[mask].reshape(-1)


def interpolation_error(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """RMS difference on the 8-bit (0-255) scale over masked pixels."""
    mask = _check_pair(a, b, mask)
    diff = 255.0 * (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return float(np.sqrt(np.mean(_masked(diff, mask) ** 2)))


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; `cap` when identical."""
    mask = _check_pair(a, b, mask)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(_masked(diff, mask) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM at every window position fully inside the image.

    Returns an (H - 10, W - 10) map for single-channel input, or the
    channel-average for (H, W, C) input.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        return np.mean([ssim_map(a[..., c], b[..., c]) for c in range(a.shape[2])], axis=0)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def filt(x):
        return signal.correlate2d(x, win, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean local SSIM; a mask selects window centers (cropped to the valid region)."""
    mask = _check_pair(a, b, mask)
    smap = ssim_map(a, b)
    if mask is None:
        return float(smap.mean())
    pad = SSIM_WINDOW // 2
    inner = mask[pad:-pad, pad:-pad]
    if not inner.any():
        raise ValueError("mask selects no pixels inside the SSIM valid region")
    return float(smap[inner].mean())


@dataclass
class Trimap:
    """Band mask: the segmentation mask dilated by `width` pixels (mask included)."""

    band: np.ndarray
    width: int


def make_trimap(seg_mask: np.ndarray, width: int) -> Trimap:
    """Dilate a boolean mask by a square structuring element of radius `width`."""
    if width < 0:
        raise ValueError("width must be >= 0")
    mask = np.asarray(seg_mask).astype(bool)
    if width == 0:
        return Trimap(band=mask.copy(), width=0)
    structure = np.ones((2 * width + 1, 2 * width + 1), dtype=bool)
    return Trimap(band=ndimage.binary_dilation(mask, structure=structure) | mask, width=width)


@dataclass
class MetricsRecord:
    frame: str
    region: str  # "full" or "trimap<width>"
    ie: float
    psnr: float
    ssim: float
    n_pixels: int


def _frame_metrics(pred, gt, mask, frame, region) -> MetricsRecord:
    n = int(mask.sum()) if mask is not None else int(np.prod(gt.shape[:2]))
    return MetricsRecord(
        frame=frame,
        region=region,
        ie=interpolation_error(pred, gt, mask),
        psnr=psnr(pred, gt, mask),
        ssim=ssim(pred, gt, mask),
        n_pixels=n,
    )


def evaluate(
    pred_dir: str | Path,
    gt_dir: str | Path,
    masks_dir: str | Path | None = None,
    trimap_widths: list[int] | None = None,
) -> tuple[list[MetricsRecord], list[str]]:
    """Compare predicted frames against ground truth, frame by frame.

    Ground-truth frames are matched to predictions by relative path. With a
    masks directory (nonzero = object), rows are added per trimap width;
    masks without widths restrict metrics to the raw mask (width 0). Missing
    predictions are collected and returned rather than aborting.

    Returns (records incl. per-region "mean" rows, missing prediction names).
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    gt_files = sorted(
        p.relative_to(gt_dir) for p in gt_dir.rglob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if masks_dir is not None and trimap_widths is None:
        trimap_widths = [0]
    records: list[MetricsRecord] = []
    missing: list[str] = []
    for rel in gt_files:
        pred_path = pred_dir / rel
        if not pred_path.exists():
            missing.append(str(rel))
            log.warning("missing prediction for %s", rel)
            continue
        gt = load_image(gt_dir / rel)
        pred = load_image(pred_path)
        frame = str(rel)
        records.append(_frame_metrics(pred, gt, None, frame, "full"))
        if masks_dir is not None:
            mask_path = Path(masks_dir) / rel
            if not mask_path.exists():
                missing.append(f"{rel} (mask)")
                log.warning("missing mask for %s", rel)
                continue
            seg = load_image(mask_path).max(axis=2) > 0
            for width in trimap_widths:
                band = make_trimap(seg, width).band
                records.append(_frame_metrics(pred, gt, band, frame, f"trimap{width}"))
    records.extend(summarize(records))
    return records, missing


def summarize(records: list[MetricsRecord]) -> list[MetricsRecord]:
    """One mean row per region over all frame rows."""
    out = []
    regions = sorted({r.region for r in records if r.frame != "mean"})
    for region in regions:
        rows = [r for r in records if r.region == region and r.frame != "mean"]
        if rows:
            out.append(
                MetricsRecord(
                    frame="mean",
                    region=region,
                    ie=float(np.mean([r.ie for r in rows])),
                    psnr=float(np.mean([r.psnr for r in rows])),
                    ssim=float(np.mean([r.ssim for r in rows])),
                    n_pixels=sum(r.n_pixels for r in rows),
                )
            )
    return out


def write_metrics_csv(path: str | Path, records: list[MetricsRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "region", "ie", "psnr", "ssim", "n_pixels"])
        for r in records:
            writer.writerow([r.frame, r.region, f"{r.ie:.6f}", f"{r.psnr:.6f}", f"{r.ssim:.6f}", r.n_pixels])
