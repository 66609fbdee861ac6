"""Command-line entry point.

Subcommands:
  train           fit a model from a YAML config (+ dotted overrides)
  interpolate     synthesize the middle frame between two images
  evaluate        score predicted frames against ground truth
  make-synthetic  write a synthetic moving-rectangles dataset

Exit statuses: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import apply_overrides, load_config, save_config
from .data import from_tensor, index_dataset, load_image, save_image, to_tensor
from .metrics import evaluate, summarize, write_metrics_csv
from .synthesis import generator_forward
from .synthetic import SyntheticConfig, write_synthetic_dataset
from .trainer import TrainConfig, load_checkpoint, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_CONFIG_ERRORS = (ValueError, KeyError, TypeError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit with status 1 per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(phase: str, exc: BaseException) -> int:
    print(f"error ({phase}): {exc}", file=sys.stderr)
    return EXIT_USAGE if phase == "config" else EXIT_RUNTIME


def _resolve_train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.override:
        cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.data is not None:
        cfg.data_root = args.data
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = _resolve_train_config(args)
        if not cfg.data_root:
            raise ValueError("no dataset root; set data_root in the config or pass --data")
        if not Path(cfg.data_root).is_dir():
            raise FileNotFoundError(f"dataset root not found: {cfg.data_root}")
        dataset = index_dataset(cfg.data_root)
    except _CONFIG_ERRORS as e:
        return _fail("config", e)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(out_dir / "resolved_config.yaml", cfg)
    try:
        state = train(cfg, dataset, resume=args.resume)
    except Exception as e:
        return _fail("train", e)
    print(f"trained {state.step} steps ({state.epoch} epochs); artifacts in {out_dir}")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    try:
        state, cfg = load_checkpoint(args.checkpoint)
        frame1 = to_tensor(load_image(args.frame1))
        frame2 = to_tensor(load_image(args.frame2))
        if frame1.shape != frame2.shape:
            raise ValueError(
                f"frame sizes differ: {tuple(frame1.shape[2:])} vs {tuple(frame2.shape[2:])}"
            )
        h, w = frame1.shape[2:]
        d = cfg.flow.divisor
        if h % d or w % d:
            raise ValueError(f"frame size {h}x{w} not divisible by {d} (flow levels)")
    except _CONFIG_ERRORS as e:
        return _fail("config", e)
    try:
        state.flow_net.eval()
        state.head.eval()
        t0 = time.perf_counter()
        est, out = generator_forward(state.flow_net, state.head, state.extractor, frame1, frame2)
        elapsed = time.perf_counter() - t0
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(out_path, from_tensor(out.refined_clamped()))
        stem = out_path.parent / out_path.stem
        if args.dump_warped:
            save_image(f"{stem}_warped.png", np.clip(from_tensor(out.warped), 0.0, 1.0))
        if args.dump_flows:
            np.save(f"{stem}_flow_1t.npy", from_tensor(est.flow_1t))
            np.save(f"{stem}_flow_2t.npy", from_tensor(est.flow_2t))
        if args.dump_mask:
            save_image(f"{stem}_mask.png", np.repeat(from_tensor(est.mask), 3, axis=2))
    except Exception as e:
        return _fail("interpolate", e)
    print(f"wrote {out_path} ({h}x{w}) in {elapsed:.3f}s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        widths = [int(x) for x in args.trimap_widths.split(",") if x] if args.trimap_widths else None
        for name in (args.pred, args.gt):
            if not Path(name).is_dir():
                raise FileNotFoundError(f"directory not found: {name}")
    except _CONFIG_ERRORS as e:
        return _fail("config", e)
    try:
        records, missing = evaluate(args.pred, args.gt, args.masks, widths)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", records)
        for row in summarize(records):
            print(
                f"{row.region:>10}  ie {row.ie:7.3f}  psnr {row.psnr:6.2f} dB  "
                f"ssim {row.ssim:.4f}  ({row.n_pixels} px)"
            )
    except Exception as e:
        return _fail("evaluate", e)
    if missing:
        print(f"missing predictions for {len(missing)} frames:", file=sys.stderr)
        for name in missing:
            print(f"  {name}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir / 'metrics.csv'}")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    try:
        h, w = (int(x) for x in args.canvas.lower().split("x"))
        cfg = SyntheticConfig(
            canvas=(h, w),
            n_shapes=args.shapes,
            texture=args.texture,
            seed=args.seed,
            count=args.count,
        )
        cfg.validate()
    except _CONFIG_ERRORS as e:
        return _fail("config", e)
    try:
        root = write_synthetic_dataset(cfg, args.out)
    except Exception as e:
        return _fail("make-synthetic", e)
    print(f"wrote {cfg.count} clips under {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="interframe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model from a config")
    p.add_argument("--config", help="YAML config path (defaults omitted keys)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", default=None, help="dataset root (overrides config)")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="synthesize the middle frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--frame2", required=True)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--dump-warped", action="store_true", help="also write the pre-refinement image")
    p.add_argument("--dump-flows", action="store_true", help="also write both flows as .npy")
    p.add_argument("--dump-mask", action="store_true", help="also write the blending mask")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted frames")
    p.add_argument("--gt", required=True, help="directory of ground-truth frames")
    p.add_argument("--masks", default=None, help="directory of object masks (nonzero = object)")
    p.add_argument("--trimap-widths", default=None, help="comma-separated dilation widths")
    p.add_argument("--out", required=True, help="output directory for metrics.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-synthetic", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", default="64x64", help="low-res frame size, HxW")
    p.add_argument("--shapes", type=int, default=3)
    p.add_argument("--texture", default="flat", choices=("flat", "checker", "noise"))
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
