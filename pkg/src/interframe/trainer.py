"""Adversarial training loop: schedules, augmentation, optimizer recipe.

Three modes share one generator code path:
  * baseline: interpolation losses only, no discriminator
  * gan:      adversarial supervision with a single full-image RoI
  * roigan:   adversarial supervision on provider-selected RoIs, real
               patches cut from the highest-resolution ground truth present

Each step runs `d_steps_per_g` discriminator updates on detached patch
pairs (real patches get decaying Gaussian noise), then one generator update
minimizing L_synth + lambda4 * L_g. The two optimizers hold disjoint
parameter sets, and discriminator parameters are grad-frozen during the
generator backward, so updates never cross over.

Determinism: all data order, augmentation, and noise randomness flows from
two serialized generators (numpy for data/augment, torch for noise), so a
fixed seed with single-worker loading reproduces runs bit-for-bit, and
checkpoints resume the exact trajectory.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np
import torch

from .data import FrameTriplet, TripletIndex, from_tensor, to_tensor
from .discriminator import PatchDiscriminator, build_discriminator
from .features import FeatureExtractor, FeatureExtractorConfig
from .flow_net import FlowNetConfig, FlowUNet, build_flow_estimator
from .losses import LossBreakdown, LossWeights, hinge_d_loss, hinge_g_loss, interpolation_loss
from .metrics import psnr
from .roi import RoI, RoiProvider, RoiProviderConfig, make_patch_pairs
from .synthesis import SynthesisConfig, SynthesisHead, build_synthesis_head, generator_forward

log = logging.getLogger(__name__)

MODES = ("baseline", "gan", "roigan")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "baseline"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    lr0: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    lr_floor: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    crop: int = 256
    flip_prob: float = 0.5
    d_steps_per_g: int = 2
    noise_sigma0: float = 0.1
    noise_decay_epochs: int | None = None  # defaults to half the epochs
    patch_size: int = 64
    disc_base_channels: int = 64
    max_steps: int | None = None
    stop_at_psnr: float | None = None
    eval_every: int = 1  # epochs between held-out evaluations; 0 disables
    checkpoint_every: int = 1  # epochs between checkpoints
    data_root: str = ""
    out_dir: str = "runs/default"
    flow: FlowNetConfig = field(default_factory=FlowNetConfig)
    extractor: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)
    perceptual: FeatureExtractorConfig = field(
        default_factory=lambda: FeatureExtractorConfig(seed=1)
    )
    head: SynthesisConfig = field(default_factory=SynthesisConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    roi: RoiProviderConfig = field(default_factory=RoiProviderConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not (self.lr0 > self.lr_floor > 0):
            raise ValueError("need lr0 > lr_floor > 0")
        if self.crop % self.flow.divisor:
            raise ValueError(
                f"crop {self.crop} not divisible by {self.flow.divisor} "
                f"(flow levels={self.flow.levels})"
            )
        if self.epochs < 1 or self.batch_size < 1 or self.d_steps_per_g < 1:
            raise ValueError("epochs, batch_size, d_steps_per_g must be >= 1")
        if self.noise_sigma0 < 0:
            raise ValueError("noise_sigma0 must be >= 0")
        self.flow.validate()
        self.extractor.validate()
        self.perceptual.validate()
        self.loss.validate()
        self.roi.validate()

    def resolved_noise_decay(self) -> int:
        if self.noise_decay_epochs is not None:
            return max(1, self.noise_decay_epochs)
        return max(1, self.epochs // 2)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Stepwise exponential decay, floored.

    lr(epoch) = max(lr0 * lr_decay^(epoch // lr_decay_every), lr_floor).
    Computed in decimal so decade factors land on exact float literals.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    k = epoch // cfg.lr_decay_every
    lr = float(Decimal(str(cfg.lr0)) * Decimal(str(cfg.lr_decay)) ** k)
    return max(lr, cfg.lr_floor)


def noise_sigma(sigma0: float, decay_epochs: int, epoch: int) -> float:
    """Linear decay of the real-patch noise amplitude, clamped at 0."""
    return sigma0 * max(0.0, 1.0 - epoch / decay_epochs)


def real_noise(
    patch: torch.Tensor, sigma: float, gen: torch.Generator | None = None
) -> torch.Tensor:
    """Add zero-mean Gaussian noise of std `sigma` (identity when sigma == 0)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return patch
    return patch + sigma * torch.randn(patch.shape, generator=gen, dtype=patch.dtype)


def augment(
    triplet: FrameTriplet,
    crop: int,
    rng: np.random.Generator | int,
    flip_prob: float = 0.5,
) -> FrameTriplet:
    """Random crop + horizontal flip, applied consistently across the triplet.

    The same window and flip decision hit all three low-res frames; the
    high-res middle is cropped at factor-scaled coordinates; attached RoIs
    are shifted/flipped into the crop frame (boxes falling outside are
    dropped).
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    h, w = triplet.middle_gt.shape[:2]
    if h < crop or w < crop:
        raise ValueError(f"triplet {triplet.id}: frames {h}x{w} smaller than crop {crop}")
    r = int(rng.integers(0, h - crop + 1))
    c = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.random() < flip_prob)

    def cut(img: np.ndarray, f: int = 1) -> np.ndarray:
        window = img[f * r : f * (r + crop), f * c : f * (c + crop)]
        return window[:, ::-1].copy() if flip else window.copy()

    rois = None
    if triplet.rois is not None:
        rois = []
        for box in triplet.rois:
            x1, y1 = box.x1 - c, box.y1 - r
            x2, y2 = box.x2 - c, box.y2 - r
            x1, x2 = max(x1, -0.5), min(x2, crop - 0.5)
            y1, y2 = max(y1, -0.5), min(y2, crop - 0.5)
            if x2 <= x1 or y2 <= y1:
                continue
            if flip:
                x1, x2 = (crop - 1) - x2, (crop - 1) - x1
            rois.append(RoI(x1, y1, x2, y2, box.score))

    return FrameTriplet(
        frame1=cut(triplet.frame1),
        middle_gt=cut(triplet.middle_gt),
        frame2=cut(triplet.frame2),
        middle_gt_hires=None
        if triplet.middle_gt_hires is None
        else cut(triplet.middle_gt_hires, triplet.factor),
        rois=rois,
        id=triplet.id,
    )


@dataclass
class TrainState:
    flow_net: FlowUNet
    head: SynthesisHead
    extractor: FeatureExtractor
    perceptual: FeatureExtractor
    disc: PatchDiscriminator | None
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam | None
    data_rng: np.random.Generator
    noise_gen: torch.Generator
    step: int = 0
    epoch: int = 0

    def generator_parameters(self):
        return list(self.flow_net.parameters()) + list(self.head.parameters())


def build_state(cfg: TrainConfig) -> TrainState:
    cfg.validate()
    flow_net = build_flow_estimator(cfg.flow, cfg.seed)
    extractor = FeatureExtractor(cfg.extractor)
    perceptual = FeatureExtractor(cfg.perceptual)
    head = build_synthesis_head(extractor.out_channels, cfg.head, seed=cfg.seed + 1)
    disc = opt_d = None
    if cfg.mode != "baseline":
        disc = build_discriminator(cfg.patch_size, cfg.disc_base_channels, seed=cfg.seed + 2)
        opt_d = torch.optim.Adam(
            disc.parameters(), lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
    opt_g = torch.optim.Adam(
        list(flow_net.parameters()) + list(head.parameters()),
        lr=cfg.lr0,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
    )
    noise_gen = torch.Generator().manual_seed(cfg.seed + 3)
    return TrainState(
        flow_net=flow_net,
        head=head,
        extractor=extractor,
        perceptual=perceptual,
        disc=disc,
        opt_g=opt_g,
        opt_d=opt_d,
        data_rng=np.random.default_rng(cfg.seed),
        noise_gen=noise_gen,
    )


def _step_rois(provider: RoiProvider, batch: list[FrameTriplet]) -> list[list[RoI]]:
    """Per-sample RoI lists for one step."""
    return [
        provider.propose(
            t.id,
            t.middle_gt.shape[:2],
            gt_boxes=t.rois,
            frame_pair=(t.frame1, t.frame2),
        )
        for t in batch
    ]


def train_step(
    state: TrainState,
    batch: list[FrameTriplet],
    cfg: TrainConfig,
    provider: RoiProvider | None = None,
) -> LossBreakdown:
    """One optimization step over a batch of (augmented) triplets."""
    if not batch:
        raise ValueError("empty batch")
    frame1 = torch.cat([to_tensor(t.frame1) for t in batch])
    frame2 = torch.cat([to_tensor(t.frame2) for t in batch])
    gt = torch.cat([to_tensor(t.middle_gt) for t in batch])

    est, out = generator_forward(state.flow_net, state.head, state.extractor, frame1, frame2)

    d_value = 0.0
    g_loss = None
    if cfg.mode != "baseline":
        if provider is None:
            provider = make_provider(cfg)
        if state.disc is None or state.opt_d is None:
            raise ValueError(f"mode {cfg.mode} requires a discriminator")
        rois_per_sample = _step_rois(provider, batch)
        reals = [
            to_tensor(t.middle_gt_hires if t.middle_gt_hires is not None else t.middle_gt)
            for t in batch
        ]

        def patch_stacks(fake_img: torch.Tensor):
            fakes, real_clean = [], []
            for i, rois in enumerate(rois_per_sample):
                pairs = make_patch_pairs(
                    fake_img[i : i + 1], reals[i], rois, cfg.patch_size, cfg.patch_size
                )
                fakes += [p.fake for p in pairs]
                real_clean += [p.real for p in pairs]
            return torch.stack(fakes), torch.stack(real_clean)

        sigma = noise_sigma(cfg.noise_sigma0, cfg.resolved_noise_decay(), state.epoch)
        fake_detached, real_clean = patch_stacks(out.refined.detach())
        state.disc.train()
        d_losses = []
        for _ in range(cfg.d_steps_per_g):
            state.opt_d.zero_grad()
            d_loss = hinge_d_loss(
                state.disc(real_noise(real_clean, sigma, state.noise_gen)),
                state.disc(fake_detached),
            )
            d_loss.backward()
            state.opt_d.step()
            d_losses.append(float(d_loss.detach()))
        d_value = float(np.mean(d_losses))

        state.disc.eval()  # freeze the power-iteration buffers for the generator pass
        for p in state.disc.parameters():
            p.requires_grad_(False)
        fake_attached, _ = patch_stacks(out.refined)
        g_loss = hinge_g_loss(state.disc(fake_attached))

    synth, comps = interpolation_loss(out.warped, out.refined, gt, est, cfg.loss, state.perceptual)
    total_g = synth if g_loss is None else synth + cfg.loss.lambda4 * g_loss

    g_value = 0.0 if g_loss is None else float(g_loss.detach())
    total_value = float(synth.detach()) + cfg.loss.lambda3 * d_value + cfg.loss.lambda4 * g_value
    if not np.isfinite(total_value):
        raise RuntimeError(
            f"non-finite loss at step {state.step}; batch: {[t.id for t in batch]}"
        )

    state.opt_g.zero_grad()
    total_g.backward()
    state.opt_g.step()
    if state.disc is not None:
        for p in state.disc.parameters():
            p.requires_grad_(True)

    return LossBreakdown(
        ph=float(comps["ph"].detach()),
        pe=float(comps["pe"].detach()),
        s=float(comps["s"].detach()),
        d=d_value,
        g=g_value,
        synth=float(synth.detach()),
        total=total_value,
    )


def make_provider(cfg: TrainConfig) -> RoiProvider:
    if cfg.mode == "gan":
        return RoiProvider(RoiProviderConfig(mode="full-image", count=1))
    return RoiProvider(cfg.roi)


@torch.no_grad()
def evaluate_psnr(state: TrainState, dataset: TripletIndex | list[FrameTriplet]) -> float:
    """Mean PSNR of clamped refined outputs over a dataset, for progress tracking."""
    values = []
    for i in range(len(dataset)):
        t = dataset.load(i) if isinstance(dataset, TripletIndex) else dataset[i]
        _, out = generator_forward(
            state.flow_net,
            state.head,
            state.extractor,
            to_tensor(t.frame1),
            to_tensor(t.frame2),
        )
        values.append(psnr(from_tensor(out.refined_clamped()), t.middle_gt))
    return float(np.mean(values))


def save_checkpoint(path: str | Path, state: TrainState, cfg: TrainConfig) -> None:
    """Single-file archive: config, named parameter maps, optimizer moments, RNG."""
    from .config import config_to_dict  # local import to avoid a cycle

    payload = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "epoch": state.epoch,
        "config": config_to_dict(cfg),
        "flow_net": state.flow_net.state_dict(),
        "head": state.head.state_dict(),
        "extractor": state.extractor.state_dict(),
        "perceptual": state.perceptual.state_dict(),
        "disc": None if state.disc is None else state.disc.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": None if state.opt_d is None else state.opt_d.state_dict(),
        "np_rng": state.data_rng.bit_generator.state,
        "noise_gen": state.noise_gen.get_state(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    """Rebuild models from the stored config and restore the full train state."""
    from .config import config_from_dict

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    cfg = config_from_dict(payload["config"])
    state = build_state(cfg)
    state.flow_net.load_state_dict(payload["flow_net"])
    state.head.load_state_dict(payload["head"])
    state.extractor.load_state_dict(payload["extractor"])
    state.perceptual.load_state_dict(payload["perceptual"])
    if payload["disc"] is not None:
        state.disc.load_state_dict(payload["disc"])
        state.opt_d.load_state_dict(payload["opt_d"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.data_rng.bit_generator.state = payload["np_rng"]
    state.noise_gen.set_state(payload["noise_gen"])
    state.step = payload["step"]
    state.epoch = payload["epoch"]
    return state, cfg


def _set_lr(opt: torch.optim.Optimizer | None, lr: float) -> None:
    if opt is not None:
        for group in opt.param_groups:
            group["lr"] = lr


def train(
    cfg: TrainConfig,
    dataset: TripletIndex | list[FrameTriplet],
    eval_dataset: TripletIndex | list[FrameTriplet] | None = None,
    resume: str | Path | None = None,
) -> TrainState:
    """Epoch loop over shuffled, augmented triplets.

    Writes train_log.jsonl (one LossBreakdown per step), eval_log.jsonl,
    and epoch checkpoints under cfg.out_dir. Returns the final state.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)

    if resume is not None:
        state, _ = load_checkpoint(resume)
    else:
        state = build_state(cfg)
    provider = make_provider(cfg) if cfg.mode != "baseline" else None
    eval_set = eval_dataset if eval_dataset is not None else dataset

    loss_log = (out_dir / "train_log.jsonl").open("a")
    eval_log = (out_dir / "eval_log.jsonl").open("a")
    t_start = time.monotonic()
    stop = False
    try:
        for epoch in range(state.epoch, cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            _set_lr(state.opt_g, lr)
            _set_lr(state.opt_d, lr)
            order = state.data_rng.permutation(len(dataset))
            for lo in range(0, len(order), cfg.batch_size):
                chunk = order[lo : lo + cfg.batch_size]
                batch = []
                for i in chunk:
                    t = dataset.load(int(i)) if isinstance(dataset, TripletIndex) else dataset[int(i)]
                    batch.append(augment(t, cfg.crop, state.data_rng, cfg.flip_prob))
                breakdown = train_step(state, batch, cfg, provider)
                record = {"step": state.step, "epoch": epoch, "lr": lr}
                record.update(breakdown.as_dict())
                loss_log.write(json.dumps(record) + "\n")
                state.step += 1
                if cfg.max_steps is not None and state.step >= cfg.max_steps:
                    stop = True
                    break
            state.epoch = epoch + 1
            if cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / "checkpoints" / f"epoch_{state.epoch:04d}.pt", state, cfg)
            if cfg.eval_every and state.epoch % cfg.eval_every == 0:
                mean_psnr = evaluate_psnr(state, eval_set)
                eval_log.write(
                    json.dumps(
                        {
                            "epoch": state.epoch,
                            "step": state.step,
                            "psnr": mean_psnr,
                            "elapsed_s": round(time.monotonic() - t_start, 3),
                        }
                    )
                    + "\n"
                )
                eval_log.flush()
                if cfg.stop_at_psnr is not None and mean_psnr >= cfg.stop_at_psnr:
                    log.info("early stop: eval PSNR %.2f dB at epoch %d", mean_psnr, state.epoch)
                    stop = True
            if stop:
                break
    finally:
        loss_log.close()
        eval_log.close()
    save_checkpoint(out_dir / "final.pt", state, cfg)
    return state
