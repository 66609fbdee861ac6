"""Synthetic moving-shapes triplets with exact ground truth.

Each triplet shows textured rectangles translating at constant velocity over
a black canvas. `velocity` is the total displacement from frame 1 to frame
3; with even velocities the middle frame sits at an integer offset, so it
can be rendered exactly and the analytic half-flow warp reproduces it
pixel-for-pixel on shape interiors.

Scenes are rendered natively at 2x resolution and the low-res frames are
produced by area downsampling, which makes the high-/low-res middle-frame
pairing exact as well (the 2x render is kept as the high-res supervision
target). All values are quantized to the 8-bit grid so in-memory triplets
match a disk round trip bit for bit.

Per-shape textures (flat / checker / noise) are defined in shape-local
coordinates and translate rigidly with the shape. Shape placements are
rejected and resampled until the swept regions of all shapes stay inside
the canvas and do not overlap, so every interior pixel moves rigidly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FrameTriplet, downsample, save_image
from .roi import RoI, write_boxes_file

TEXTURES = ("flat", "checker", "noise")
HIRES_FACTOR = 2
CHECKER_CELL = 4  # hires pixels


@dataclass
class SyntheticConfig:
    canvas: tuple[int, int] = (64, 64)  # low-res (H, W)
    n_shapes: int = 3
    velocity_range: tuple[int, int] = (2, 4)  # |component| bounds, frame1 -> frame3, even
    texture: str = "flat"
    seed: int = 0
    count: int = 8  # triplets to generate
    min_size: int = 8
    max_size: int = 16
    margin: int = 2
    allow_odd_velocities: bool = False

    def validate(self) -> None:
        h, w = self.canvas
        lo, hi = self.velocity_range
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}; expected one of {TEXTURES}")
        if not (0 <= lo <= hi):
            raise ValueError(f"bad velocity_range {self.velocity_range}")
        if not self.allow_odd_velocities and (lo % 2 or hi % 2):
            raise ValueError(
                "velocity bounds must be even so the middle frame is exact "
                "(set allow_odd_velocities to override)"
            )
        if self.n_shapes < 1 or self.count < 1:
            raise ValueError("n_shapes and count must be >= 1")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("need 1 <= min_size <= max_size")
        if self.max_size + hi + 2 * self.margin >= min(h, w):
            raise ValueError(
                f"canvas {h}x{w} too small for shapes up to {self.max_size}px "
                f"moving {hi}px with margin {self.margin}"
            )


@dataclass
class _Shape:
    x: int  # low-res top-left at frame 1
    y: int
    w: int
    h: int
    vx: int  # total displacement frame1 -> frame3
    vy: int
    texture: np.ndarray  # (2h, 2w, 3) hires pattern, moves with the shape

    def pos(self, step: int) -> tuple[float, float]:
        """Low-res top-left at frame step 0, 1 (middle), or 2."""
        return self.x + step * self.vx / 2.0, self.y + step * self.vy / 2.0

    def pos_hires(self, step: int) -> tuple[int, int]:
        """Hires top-left; integral for every step even with odd velocities."""
        return (
            self.x * HIRES_FACTOR + step * self.vx,
            self.y * HIRES_FACTOR + step * self.vy,
        )

    def sweep(self) -> tuple[int, int, int, int]:
        xs = [self.x, self.x + self.vx]
        ys = [self.y, self.y + self.vy]
        return min(xs), min(ys), max(xs) + self.w, max(ys) + self.h


@dataclass
class SyntheticTriplet:
    """A FrameTriplet plus analytic debug ground truth."""

    triplet: FrameTriplet
    flow_1t: np.ndarray  # (H, W, 2) backward flow middle -> frame1
    flow_2t: np.ndarray  # (H, W, 2) backward flow middle -> frame2
    interior: np.ndarray  # (H, W) bool, union of shape rectangles at the middle frame
    shapes: list[_Shape] = field(default_factory=list)


def _quantize(image: np.ndarray) -> np.ndarray:
    return (np.round(image * 255.0) / 255.0).astype(np.float32)


def _make_texture(rng: np.random.Generator, texture: str, w: int, h: int) -> np.ndarray:
    hw, hh = w * HIRES_FACTOR, h * HIRES_FACTOR
    if texture == "flat":
        color = rng.integers(64, 256, size=3) / 255.0
        return np.broadcast_to(color, (hh, hw, 3)).astype(np.float32)
    if texture == "checker":
        c0 = rng.integers(64, 256, size=3) / 255.0
        c1 = rng.integers(0, 192, size=3) / 255.0
        yy, xx = np.mgrid[0:hh, 0:hw]
        cells = ((yy // CHECKER_CELL) + (xx // CHECKER_CELL)) % 2
        return np.where(cells[..., None] == 0, c0, c1).astype(np.float32)
    pattern = rng.integers(32, 256, size=(hh, hw, 3)) / 255.0
    return pattern.astype(np.float32)


def _place_shapes(cfg: SyntheticConfig, rng: np.random.Generator) -> list[_Shape]:
    h, w = cfg.canvas
    lo, hi = cfg.velocity_range
    step = 1 if cfg.allow_odd_velocities else 2
    magnitudes = list(range(lo, hi + 1, step))

    def draw_velocity() -> int:
        mag = int(rng.choice(magnitudes))
        return mag * (1 if mag == 0 else int(rng.choice((-1, 1))))

    shapes: list[_Shape] = []
    for _ in range(cfg.n_shapes):
        for _attempt in range(200):
            sw = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            sh = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            vx, vy = draw_velocity(), draw_velocity()
            x_lo = cfg.margin + max(0, -vx)
            x_hi = w - sw - cfg.margin - max(0, vx)
            y_lo = cfg.margin + max(0, -vy)
            y_hi = h - sh - cfg.margin - max(0, vy)
            if x_hi < x_lo or y_hi < y_lo:
                continue
            x = int(rng.integers(x_lo, x_hi + 1))
            y = int(rng.integers(y_lo, y_hi + 1))
            cand = _Shape(x, y, sw, sh, vx, vy, _make_texture(rng, cfg.texture, sw, sh))
            cx1, cy1, cx2, cy2 = cand.sweep()
            clear = all(
                cx2 + 1 <= ox1 or ox2 + 1 <= cx1 or cy2 + 1 <= oy1 or oy2 + 1 <= cy1
                for ox1, oy1, ox2, oy2 in (s.sweep() for s in shapes)
            )
            if clear:
                shapes.append(cand)
                break
        else:
            raise ValueError(
                f"could not place {cfg.n_shapes} non-overlapping shapes on a "
                f"{h}x{w} canvas; shrink shapes or velocities"
            )
    return shapes


def _render(cfg: SyntheticConfig, shapes: list[_Shape], step: int) -> np.ndarray:
    h, w = cfg.canvas
    hires = np.zeros((h * HIRES_FACTOR, w * HIRES_FACTOR, 3), dtype=np.float32)
    for s in shapes:
        hx, hy = s.pos_hires(step)
        hires[hy : hy + s.h * HIRES_FACTOR, hx : hx + s.w * HIRES_FACTOR] = s.texture
    return hires


def make_synthetic(cfg: SyntheticConfig) -> list[SyntheticTriplet]:
    """Generate `cfg.count` triplets with exact boxes, flows, and 2x hires middles."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.canvas
    out: list[SyntheticTriplet] = []
    for t in range(cfg.count):
        shapes = _place_shapes(cfg, rng)
        hires_frames = [_render(cfg, shapes, step) for step in range(3)]
        frames = [_quantize(downsample(f, HIRES_FACTOR)) for f in hires_frames]
        hires_mid = _quantize(hires_frames[1])

        rois = []
        flow_1t = np.zeros((h, w, 2), dtype=np.float32)
        flow_2t = np.zeros((h, w, 2), dtype=np.float32)
        interior = np.zeros((h, w), dtype=bool)
        for k, s in enumerate(shapes):
            mx, my = s.pos(1)
            rois.append(
                RoI(mx - 0.5, my - 0.5, mx + s.w - 0.5, my + s.h - 0.5, score=1.0 - 0.001 * k)
            )
            # fully covered pixels only; exact rectangle for even velocities
            region = np.s_[
                int(np.ceil(my)) : int(np.floor(my + s.h)), int(np.ceil(mx)) : int(np.floor(mx + s.w))
            ]
            interior[region] = True
            flow_1t[region] = (-s.vx / 2.0, -s.vy / 2.0)
            flow_2t[region] = (s.vx / 2.0, s.vy / 2.0)

        triplet = FrameTriplet(
            frame1=frames[0],
            middle_gt=frames[1],
            frame2=frames[2],
            middle_gt_hires=hires_mid,
            rois=rois,
            id=f"clip_{t:03d}/frame_1.png",
        )
        triplet.validate()
        out.append(SyntheticTriplet(triplet, flow_1t, flow_2t, interior, shapes))
    return out


def write_synthetic_dataset(cfg: SyntheticConfig, root: str | Path) -> Path:
    """Write a loadable dataset tree: frames, hires middles, boxes sidecar."""
    root = Path(root)
    hires_root = root.parent / (root.name + "_hires")
    boxes: dict[str, list[RoI]] = {}
    for t, synth in enumerate(make_synthetic(cfg)):
        clip = f"clip_{t:03d}"
        clip_dir = root / clip
        clip_dir.mkdir(parents=True, exist_ok=True)
        trip = synth.triplet
        for i, frame in enumerate((trip.frame1, trip.middle_gt, trip.frame2)):
            save_image(clip_dir / f"frame_{i}.png", frame)
        hi_dir = hires_root / clip
        hi_dir.mkdir(parents=True, exist_ok=True)
        save_image(hi_dir / "frame_1.png", trip.middle_gt_hires)
        boxes[f"{clip}/frame_1.png"] = trip.rois
    write_boxes_file(root / "boxes.jsonl", boxes)
    return root
