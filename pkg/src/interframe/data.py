"""Dataset ingestion: triplet indexing, high/low-res pairing, image I/O.

On-disk layout: `root/<clip>/<frame>.png` with frames in lexicographic
order. If a sibling tree named `<root>_hires` exists, each triplet's middle
frame is paired with the same-named high-resolution file and the integer
resolution factor is recorded. A boxes sidecar `root/boxes.jsonl` (see the
roi module for the schema) attaches per-frame ground-truth boxes.

Frame identifiers are "<clip>/<filename>". Images load as float32 (H, W, 3)
arrays in [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .roi import RoI, read_boxes_file

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as float32 (H, W, 3) in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a float (H, W, 3) array in [0, 1] as an 8-bit image."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, C) [0,1] array -> (1, C, H, W) float tensor."""
    return torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).unsqueeze(0).float()


def from_tensor(tensor: torch.Tensor) -> np.ndarray:
    """(1, C, H, W) or (C, H, W) tensor -> (H, W, C) float32 array."""
    if tensor.dim() == 4:
        tensor = tensor[0]
    return tensor.detach().permute(1, 2, 0).cpu().numpy().astype(np.float32)


@dataclass
class FrameTriplet:
    """Three consecutive frames plus optional high-res middle and RoIs."""

    frame1: np.ndarray
    middle_gt: np.ndarray
    frame2: np.ndarray
    middle_gt_hires: np.ndarray | None = None
    rois: list[RoI] | None = None
    id: str = ""

    def validate(self) -> None:
        if not (self.frame1.shape == self.middle_gt.shape == self.frame2.shape):
            raise ValueError(f"triplet {self.id}: frame shapes disagree")
        if self.middle_gt_hires is not None:
            fh = self.middle_gt_hires.shape[0] / self.middle_gt.shape[0]
            fw = self.middle_gt_hires.shape[1] / self.middle_gt.shape[1]
            if fh != fw or fh != int(fh):
                raise ValueError(
                    f"triplet {self.id}: hires size {self.middle_gt_hires.shape[:2]} is not "
                    f"an integer multiple of {self.middle_gt.shape[:2]}"
                )

    @property
    def factor(self) -> int:
        if self.middle_gt_hires is None:
            return 1
        return int(self.middle_gt_hires.shape[0] / self.middle_gt.shape[0])


@dataclass
class TripletRecord:
    """Index entry: file paths only, loaded lazily."""

    id: str
    frame1: Path
    middle: Path
    frame2: Path
    middle_hires: Path | None = None
    factor: int = 1


@dataclass
class TripletIndex:
    root: Path
    records: list[TripletRecord] = field(default_factory=list)
    boxes: dict[str, list[RoI]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def load(self, i: int) -> FrameTriplet:
        rec = self.records[i]
        triplet = FrameTriplet(
            frame1=load_image(rec.frame1),
            middle_gt=load_image(rec.middle),
            frame2=load_image(rec.frame2),
            middle_gt_hires=load_image(rec.middle_hires) if rec.middle_hires else None,
            rois=self.boxes.get(rec.id),
            id=rec.id,
        )
        triplet.validate()
        return triplet


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.height, img.width


def _frame_files(clip_dir: Path) -> list[Path]:
    return sorted(p for p in clip_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def index_dataset(root: str | Path, stride: int = 1, limit: int | None = None) -> TripletIndex:
    """Index all (k, k+1, k+2) frame triplets under `root`.

    `stride` subsamples the sliding window within each clip; `limit` caps
    the number of triplets taken per clip. Clips with fewer than 3 frames
    are skipped with a warning. A `<root>_hires` sibling tree, when present,
    must contain every middle frame; a missing file is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    hires_root = root.parent / (root.name + "_hires")
    index = TripletIndex(root=root)

    boxes_path = root / "boxes.jsonl"
    if boxes_path.exists():
        index.boxes = read_boxes_file(boxes_path)

    for clip_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = _frame_files(clip_dir)
        if len(frames) < 3:
            log.warning("skipping clip %s: only %d frame(s)", clip_dir.name, len(frames))
            continue
        taken = 0
        for k in range(0, len(frames) - 2, stride):
            if limit is not None and taken >= limit:
                break
            mid = frames[k + 1]
            rec = TripletRecord(
                id=f"{clip_dir.name}/{mid.name}",
                frame1=frames[k],
                middle=mid,
                frame2=frames[k + 2],
            )
            if hires_root.is_dir():
                hi = hires_root / clip_dir.name / mid.name
                if not hi.exists():
                    raise FileNotFoundError(
                        f"high-res tree {hires_root} is missing {hi}"
                    )
                hh, _ = _image_size(hi)
                lh, _ = _image_size(mid)
                if hh % lh:
                    raise ValueError(f"{hi}: height {hh} not a multiple of low-res {lh}")
                rec.middle_hires = hi
                rec.factor = hh // lh
            index.records.append(rec)
            taken += 1
    return index


def index_roots(roots: list[str | Path], stride: int = 1, limit: int | None = None) -> TripletIndex:
    """Concatenate indexes over several roots (mixed-corpus training)."""
    if not roots:
        raise ValueError("no dataset roots given")
    combined = index_dataset(roots[0], stride, limit)
    for extra in roots[1:]:
        part = index_dataset(extra, stride, limit)
        prefix = Path(extra).name
        for rec in part.records:
            rec.id = f"{prefix}/{rec.id}"
        combined.records.extend(part.records)
        combined.boxes.update({f"{prefix}/{k}": v for k, v in part.boxes.items()})
    return combined


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Area-averaging reduction by an integer factor."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return image.copy()
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} not divisible by factor {factor}")
    blocks = image.reshape(h // factor, factor, w // factor, factor, -1)
    out = blocks.mean(axis=(1, 3))
    return out.reshape(h // factor, w // factor, *image.shape[2:])
