"""Region-of-interest machinery: proposals, aligned pooling, patch pairing.

Boxes are continuous pixel-extent rectangles (x1, y1, x2, y2) in the same
coordinate frame the warping operators use: pixel (i, j) is centered at
continuous coordinate (i, j), so a region covering pixel columns a..b spans
x in [a - 0.5, b + 0.5]. The full image is (-0.5, -0.5, W - 0.5, H - 0.5).

`roi_align` splits a box into an out_h x out_w grid of bins and bilinearly
samples each bin at its center (one sample per bin), so gradients reach the
exact source pixels of the feature map. Box coordinates are constants:
no gradient flows into them.

Proposal providers are pluggable; an external detector is deliberately out
of scope. Three modes are supported plus an internal "full-image" mode used
by whole-image adversarial training and as the empty-proposal fallback:

  * boxes-file: precomputed boxes from a JSONL sidecar, one record per
    frame: {"frame": <id>, "boxes": [[x1, y1, x2, y2, score], ...]}
  * ground-truth-boxes: boxes attached to the dataset triplet
  * motion-blob: connected components of the thresholded frame difference
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

log = logging.getLogger(__name__)

PROVIDER_MODES = ("boxes-file", "ground-truth-boxes", "motion-blob", "full-image")
SELECTIONS = ("top-k", "score-threshold")


@dataclass(frozen=True)
class RoI:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def validate(self) -> None:
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self}")

    def scaled(self, factor: float) -> "RoI":
        return RoI(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor, self.score)


def full_image_roi(height: int, width: int, score: float = 1.0) -> RoI:
    return RoI(-0.5, -0.5, width - 0.5, height - 0.5, score)


def scale_rois(rois: list[RoI], factor: float) -> list[RoI]:
    """Map boxes between resolutions by multiplying all coordinates by `factor`."""
    if factor <= 0:
        raise ValueError(f"factor must be > 0, got {factor}")
    return [r.scaled(factor) for r in rois]


def _clip_box(roi: RoI, height: int, width: int) -> RoI:
    return RoI(
        max(roi.x1, -0.5),
        max(roi.y1, -0.5),
        min(roi.x2, width - 0.5),
        min(roi.y2, height - 0.5),
        roi.score,
    )


def roi_align(
    feature_map: torch.Tensor, rois: list[RoI], out_h: int, out_w: int
) -> list[torch.Tensor]:
    """Pool each box into an (C, out_h, out_w) patch by bin-center bilinear sampling.

    `feature_map` is (C, H, W) or (1, C, H, W). Boxes are clipped to the
    image extent first; a box that degenerates after clipping is rejected
    with its index.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    if feature_map.dim() == 4:
        if feature_map.shape[0] != 1:
            raise ValueError("roi_align expects a single feature map, not a batch")
        feature_map = feature_map[0]
    if feature_map.dim() != 3:
        raise ValueError(f"expected (C, H, W) map, got {tuple(feature_map.shape)}")
    c, h, w = feature_map.shape

    centers_x, centers_y = [], []
    for i, roi in enumerate(rois):
        clipped = _clip_box(roi, h, w)
        if clipped.x2 <= clipped.x1 or clipped.y2 <= clipped.y1:
            raise ValueError(f"RoI {i} degenerate after clipping to {h}x{w}: {roi}")
        bin_w = (clipped.x2 - clipped.x1) / out_w
        bin_h = (clipped.y2 - clipped.y1) / out_h
        xs = clipped.x1 + (torch.arange(out_w, dtype=feature_map.dtype) + 0.5) * bin_w
        ys = clipped.y1 + (torch.arange(out_h, dtype=feature_map.dtype) + 0.5) * bin_h
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        centers_x.append(gx)
        centers_y.append(gy)

    x = torch.stack(centers_x).clamp(0, w - 1)  # (N, out_h, out_w)
    y = torch.stack(centers_y).clamp(0, h - 1)
    x0 = x.floor()
    y0 = y.floor()
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)

    flat = feature_map.reshape(c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(len(rois), 1, -1).expand(-1, c, -1)
        return flat.unsqueeze(0).expand(len(rois), -1, -1).gather(2, idx).reshape(
            len(rois), c, out_h, out_w
        )

    v00 = gather(y0i, x0i)
    v01 = gather(y0i, x1i)
    v10 = gather(y1i, x0i)
    v11 = gather(y1i, x1i)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    patches = top + wy * (bot - top)
    return list(patches.unbind(0))


@dataclass
class PatchPair:
    """Aligned synthesized/real patch pair; the real side carries no gradient."""

    fake: torch.Tensor
    real: torch.Tensor


def resolution_factor(real: torch.Tensor, fake: torch.Tensor) -> float:
    """Size ratio between the real (possibly high-res) image and the fake one."""
    rh, rw = real.shape[-2:]
    fh, fw = fake.shape[-2:]
    fy, fx = rh / fh, rw / fw
    if abs(fy - fx) > 1e-9:
        raise ValueError(f"anisotropic resolution ratio: {fy} vs {fx}")
    return fy


def make_patch_pairs(
    fake_img: torch.Tensor,
    real_img: torch.Tensor,
    rois: list[RoI],
    out_h: int = 64,
    out_w: int = 64,
    factor: float | None = None,
) -> list[PatchPair]:
    """Cut matching fake/real patches: fake from the synthesized frame with the
    original boxes, real from the (possibly higher-resolution) ground truth
    with factor-scaled boxes. The factor defaults to the image-size ratio.
    """
    if factor is None:
        factor = resolution_factor(real_img, fake_img)
    fake_patches = roi_align(fake_img, rois, out_h, out_w)
    real_patches = roi_align(real_img.detach(), scale_rois(rois, factor), out_h, out_w)
    return [PatchPair(fake=f, real=r.detach()) for f, r in zip(fake_patches, real_patches)]


@dataclass
class RoiProviderConfig:
    mode: str = "ground-truth-boxes"
    count: int = 16
    selection: str = "top-k"
    score_threshold: float = 0.5
    boxes_file: str | None = None
    blob_threshold: float = 0.05  # motion-blob: min |I1 - I2| to count as moving
    min_blob_area: int = 4  # motion-blob: drop components smaller than this

    def validate(self) -> None:
        if self.mode not in PROVIDER_MODES:
            raise ValueError(f"unknown provider mode {self.mode!r}; expected one of {PROVIDER_MODES}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}; expected one of {SELECTIONS}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.mode == "boxes-file" and not self.boxes_file:
            raise ValueError("boxes-file mode requires boxes_file")


def read_boxes_file(path: str | Path) -> dict[str, list[RoI]]:
    """Load a JSONL boxes sidecar into a frame-id -> boxes map."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"boxes sidecar not found: {path}")
    table: dict[str, list[RoI]] = {}
    with path.open() as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            try:
                table[rec["frame"]] = [RoI(*map(float, b)) for b in rec["boxes"]]
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad boxes record") from exc
    return table


def write_boxes_file(path: str | Path, table: dict[str, list[RoI]]) -> None:
    with Path(path).open("w") as fh:
        for frame_id, rois in table.items():
            boxes = [[r.x1, r.y1, r.x2, r.y2, r.score] for r in rois]
            fh.write(json.dumps({"frame": frame_id, "boxes": boxes}) + "\n")


def motion_blob_rois(frame_a: np.ndarray, frame_b: np.ndarray, config: RoiProviderConfig) -> list[RoI]:
    """Boxes around connected components of the thresholded frame difference.

    Frames are (H, W, C) arrays in [0, 1]. Scores are component areas
    normalized by the largest component.
    """
    diff = np.abs(frame_a.astype(np.float64) - frame_b.astype(np.float64))
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    moving = diff > config.blob_threshold
    labels, n = ndimage.label(moving)
    rois = []
    if n:
        areas = ndimage.sum_labels(moving, labels, index=range(1, n + 1))
        slices = ndimage.find_objects(labels)
        max_area = float(areas.max())
        for area, sl in zip(areas, slices):
            if sl is None or area < config.min_blob_area:
                continue
            ysl, xsl = sl
            rois.append(
                RoI(
                    x1=xsl.start - 0.5,
                    y1=ysl.start - 0.5,
                    x2=xsl.stop - 0.5,
                    y2=ysl.stop - 0.5,
                    score=float(area) / max_area,
                )
            )
    return rois


def select_rois(rois: list[RoI], config: RoiProviderConfig) -> list[RoI]:
    ordered = sorted(rois, key=lambda r: -r.score)
    if config.selection == "top-k":
        return ordered[: config.count]
    return [r for r in ordered if r.score >= config.score_threshold]


class RoiProvider:
    """Deterministic per-frame RoI source for adversarial training."""

    def __init__(self, config: RoiProviderConfig):
        config.validate()
        self.config = config
        self._table = read_boxes_file(config.boxes_file) if config.mode == "boxes-file" else None

    def propose(
        self,
        frame_id: str,
        image_shape: tuple[int, int],
        gt_boxes: list[RoI] | None = None,
        frame_pair: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> list[RoI]:
        """Return selected RoIs for one frame.

        image_shape is (H, W) of the frame the boxes live on. Falls back to
        one full-image RoI (with a warning) when a mode yields nothing.
        """
        h, w = image_shape
        mode = self.config.mode
        if mode == "full-image":
            return [full_image_roi(h, w)]
        if mode == "boxes-file":
            candidates = self._table.get(frame_id, [])
        elif mode == "ground-truth-boxes":
            candidates = list(gt_boxes or [])
        else:  # motion-blob
            if frame_pair is None:
                raise ValueError("motion-blob provider needs a frame pair")
            candidates = motion_blob_rois(frame_pair[0], frame_pair[1], self.config)
        selected = select_rois(candidates, self.config)
        if not selected:
            log.warning("no RoIs for frame %s; falling back to full-image RoI", frame_id)
            return [full_image_roi(h, w)]
        return selected


def propose_rois(
    config: RoiProviderConfig,
    frame_id: str,
    image_shape: tuple[int, int],
    gt_boxes: list[RoI] | None = None,
    frame_pair: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[RoI]:
    """One-shot functional form of RoiProvider.propose."""
    return RoiProvider(config).propose(frame_id, image_shape, gt_boxes, frame_pair)
