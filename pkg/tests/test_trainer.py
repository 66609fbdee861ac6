import json

import numpy as np
import pytest
import torch

from interframe.data import FrameTriplet
from interframe.features import FeatureExtractorConfig
from interframe.flow_net import FlowNetConfig
from interframe.losses import hinge_g_loss
from interframe.roi import RoI, RoiProviderConfig, make_patch_pairs
from interframe.synthesis import SynthesisConfig
from interframe.synthetic import SyntheticConfig, make_synthetic
from interframe.trainer import (
    TrainConfig,
    augment,
    build_state,
    evaluate_psnr,
    load_checkpoint,
    lr_schedule,
    make_provider,
    noise_sigma,
    real_noise,
    save_checkpoint,
    train,
    train_step,
)


def toy_config(mode="baseline", **kw) -> TrainConfig:
    cfg = TrainConfig(
        mode=mode,
        crop=32,
        batch_size=2,
        epochs=2,
        patch_size=64,
        disc_base_channels=8,
        flow=FlowNetConfig(levels=3, base_channels=8),
        extractor=FeatureExtractorConfig(out_channels=4),
        perceptual=FeatureExtractorConfig(out_channels=4, seed=1),
        head=SynthesisConfig(hidden_channels=8),
        roi=RoiProviderConfig(mode="ground-truth-boxes", count=2),
    )
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def toy_triplets(count=2, seed=0, texture="flat", canvas=(32, 32)):
    cfg = SyntheticConfig(
        canvas=canvas, count=count, seed=seed, texture=texture, n_shapes=1,
        min_size=6, max_size=10, margin=1,
    )
    return [s.triplet for s in make_synthetic(cfg)]


def coordinate_triplet(h=12, w=16, factor=2):
    """Frames encoding (row, col) in two channels, for crop arithmetic checks."""

    def coded(hh, ww, scale):
        img = np.zeros((hh, ww, 3), dtype=np.float32)
        img[..., 0] = np.arange(hh, dtype=np.float32)[:, None] / scale
        img[..., 1] = np.arange(ww, dtype=np.float32)[None, :] / scale
        return img

    low = coded(h, w, 100.0)
    return FrameTriplet(
        frame1=low.copy(),
        middle_gt=low.copy(),
        frame2=low.copy(),
        middle_gt_hires=coded(h * factor, w * factor, 100.0),
        rois=[RoI(2.0, 3.0, 6.0, 7.0, 0.9)],
        id="coded",
    )


def test_lr_schedule_exact_decades():
    cfg = TrainConfig()
    expect = {0: 1e-4, 5: 1e-4, 10: 1e-5, 19: 1e-5, 20: 1e-6, 30: 1e-7, 80: 1e-8, 500: 1e-8}
    for epoch, lr in expect.items():
        assert lr_schedule(epoch, cfg) == lr, epoch
    values = [lr_schedule(e, cfg) for e in range(120)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(1e-8 <= v <= 1e-4 for v in values)
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_lr_schedule_custom_cadence():
    cfg = TrainConfig(lr0=1e-3, lr_decay_every=5, lr_floor=1e-6)
    assert lr_schedule(4, cfg) == 1e-3
    assert lr_schedule(5, cfg) == 1e-4
    assert lr_schedule(10, cfg) == 1e-5
    assert lr_schedule(15, cfg) == 1e-6
    assert lr_schedule(40, cfg) == 1e-6


def test_noise_schedule_linear_decay():
    assert noise_sigma(0.1, 10, 0) == 0.1
    assert abs(noise_sigma(0.1, 10, 5) - 0.05) < 1e-12
    assert noise_sigma(0.1, 10, 10) == 0.0
    assert noise_sigma(0.1, 10, 25) == 0.0


def test_real_noise_statistics_and_determinism():
    base = torch.zeros(200000)
    gen = torch.Generator().manual_seed(0)
    noisy = real_noise(base, 0.1, gen)
    assert abs(noisy.std().item() - 0.1) / 0.1 < 0.02
    assert abs(noisy.mean().item()) < 1e-3
    gen2 = torch.Generator().manual_seed(0)
    assert torch.equal(real_noise(base, 0.1, gen2), noisy)
    assert real_noise(base, 0.0) is base
    with pytest.raises(ValueError):
        real_noise(base, -0.1)


class StubRng:
    """Scripted stand-in for np.random.Generator: fixed crop offsets and flip draw."""

    def __init__(self, r, c, flip_draw):
        self._ints = [r, c]
        self._flip = flip_draw

    def integers(self, lo, hi):
        return self._ints.pop(0)

    def random(self):
        return self._flip


def test_augment_crops_consistently():
    trip = coordinate_triplet()  # 12x16 low-res, 24x32 hires
    out = augment(trip, 8, StubRng(r=1, c=1, flip_draw=1.0), flip_prob=0.0)
    assert out.frame1.shape == (8, 8, 3)
    assert np.array_equal(out.frame1, out.middle_gt)
    assert np.allclose(out.frame1[..., 0] * 100, np.arange(1, 9)[:, None])
    assert np.allclose(out.frame1[..., 1] * 100, np.arange(1, 9)[None, :])
    # hires window sits at factor-scaled coordinates
    assert out.middle_gt_hires.shape == (16, 16, 3)
    assert round(float(out.middle_gt_hires[0, 0, 0]) * 100) == 2
    assert round(float(out.middle_gt_hires[0, 0, 1]) * 100) == 2
    # attached box (2, 3, 6, 7) shifted into the crop frame
    [box] = out.rois
    assert (box.x1, box.y1, box.x2, box.y2) == (1.0, 2.0, 5.0, 6.0)


def test_augment_flip_mirrors_frames_and_boxes():
    trip = coordinate_triplet()
    out = augment(trip, 12, StubRng(r=0, c=2, flip_draw=0.0), flip_prob=1.0)
    assert out.frame1.shape == (12, 12, 3)
    # window cols 2..13, then mirrored: columns decrease left to right
    assert np.allclose(out.frame1[0, :, 1] * 100, np.arange(13, 1, -1))
    assert np.allclose(out.middle_gt_hires[0, :, 1] * 100, np.arange(27, 3, -1))
    # box (2, 3, 6, 7) shifts to x (0, 4), then x' = (12-1) - x reverses it
    [box] = out.rois
    assert (box.x1, box.x2) == (11 - 4.0, 11 - 0.0)
    assert (box.y1, box.y2) == (3.0, 7.0)  # y untouched by a horizontal flip


def test_augment_drops_boxes_outside_crop():
    trip = coordinate_triplet(h=16, w=16)
    trip.rois = [RoI(0.0, 0.0, 2.0, 2.0), RoI(12.0, 12.0, 15.0, 15.0)]

    class FixedRng:
        def integers(self, lo, hi):
            return 8  # crop window rows/cols 8..15

        def random(self):
            return 1.0  # no flip

    out = augment(trip, 8, FixedRng(), flip_prob=0.0)
    assert len(out.rois) == 1
    box = out.rois[0]
    assert (box.x1, box.y1, box.x2, box.y2) == (4.0, 4.0, 7.0, 7.0)


def test_augment_rejects_small_frames():
    trip = coordinate_triplet(h=6, w=6)
    with pytest.raises(ValueError, match="smaller than crop"):
        augment(trip, 8, np.random.default_rng(0))


def test_config_validation():
    toy_config().validate()
    with pytest.raises(ValueError, match="mode"):
        toy_config(mode="wgan").validate()
    with pytest.raises(ValueError, match="lr0"):
        toy_config(lr0=1e-9).validate()
    with pytest.raises(ValueError, match="divisible"):
        toy_config(crop=30).validate()


def test_build_state_deterministic_and_mode_dependent():
    a = build_state(toy_config(seed=5))
    b = build_state(toy_config(seed=5))
    for pa, pb in zip(a.generator_parameters(), b.generator_parameters()):
        assert torch.equal(pa, pb)
    assert a.disc is None and a.opt_d is None
    c = build_state(toy_config(mode="roigan", seed=5))
    assert c.disc is not None and c.opt_d is not None


def test_train_step_mode_contracts():
    trips = toy_triplets()
    cfg = toy_config()
    state = build_state(cfg)
    bd = train_step(state, trips, cfg)
    assert bd.d == 0.0 and bd.g == 0.0
    assert abs(bd.total - bd.synth) < 1e-12
    cfg_r = toy_config(mode="roigan")
    state_r = build_state(cfg_r)
    bd_r = train_step(state_r, trips, cfg_r, make_provider(cfg_r))
    assert bd_r.d != 0.0
    expect_total = bd_r.synth + cfg_r.loss.lambda3 * bd_r.d + cfg_r.loss.lambda4 * bd_r.g
    assert abs(bd_r.total - expect_total) < 1e-9
    with pytest.raises(ValueError):
        train_step(state, [], cfg)


def test_gan_mode_equals_roigan_with_full_image_provider():
    trips = toy_triplets()
    cfg_gan = toy_config(mode="gan")
    cfg_roi = toy_config(mode="roigan", roi=RoiProviderConfig(mode="full-image", count=1))
    state_gan = build_state(cfg_gan)
    state_roi = build_state(cfg_roi)
    bd_gan = train_step(state_gan, trips, cfg_gan)
    bd_roi = train_step(state_roi, trips, cfg_roi)
    assert bd_gan.as_dict() == bd_roi.as_dict()
    for pa, pb in zip(state_gan.generator_parameters(), state_roi.generator_parameters()):
        assert torch.equal(pa, pb)
    for pa, pb in zip(state_gan.disc.parameters(), state_roi.disc.parameters()):
        assert torch.equal(pa, pb)


def test_discriminator_steps_leave_generator_untouched():
    # zero synthesis weights and zero adversarial generator weight: the G
    # update sees an exactly-zero gradient, so any parameter drift would
    # have to come from the D steps
    trips = toy_triplets()
    cfg = toy_config(mode="roigan")
    cfg.loss.lambda0 = cfg.loss.lambda1 = cfg.loss.lambda2 = cfg.loss.lambda4 = 0.0
    state = build_state(cfg)
    gen_before = [p.detach().clone() for p in state.generator_parameters()]
    disc_before = [p.detach().clone() for p in state.disc.parameters()]
    train_step(state, trips, cfg, make_provider(cfg))
    for before, after in zip(gen_before, state.generator_parameters()):
        assert torch.equal(before, after)
    assert any(
        not torch.equal(before, after)
        for before, after in zip(disc_before, state.disc.parameters())
    )


def test_generator_update_leaves_discriminator_untouched():
    cfg = toy_config(mode="roigan")
    state = build_state(cfg)
    trips = toy_triplets()
    fake = torch.rand(1, 3, 32, 32, requires_grad=True)
    real = torch.rand(1, 3, 64, 64)
    pairs = make_patch_pairs(fake, real, trips[0].rois, 64, 64)
    disc_before = [p.detach().clone() for p in state.disc.parameters()]
    state.disc.eval()
    for p in state.disc.parameters():
        p.requires_grad_(False)
    g_loss = hinge_g_loss(state.disc(torch.stack([p.fake for p in pairs])))
    g_loss.backward()
    assert fake.grad is not None and torch.isfinite(fake.grad).all()
    for before, p in zip(disc_before, state.disc.parameters()):
        assert p.grad is None
        assert torch.equal(before, p)


def test_train_step_aborts_on_nonfinite_loss():
    cfg = toy_config()
    state = build_state(cfg)
    bad = toy_triplets(count=1)[0]
    bad.frame1 = bad.frame1.copy()
    bad.frame1[0, 0, 0] = np.nan
    with pytest.raises((RuntimeError, ValueError), match="bad|non-finite"):
        train_step(state, [bad], cfg)


def test_train_step_descends_on_fixed_batch():
    trips = toy_triplets(count=1)
    cfg = toy_config(batch_size=1)
    state = build_state(cfg)
    first = train_step(state, trips, cfg).synth
    for _ in range(24):
        last = train_step(state, trips, cfg).synth
    assert last < first


def test_checkpoint_roundtrip(tmp_path):
    cfg = toy_config(mode="roigan", out_dir=str(tmp_path / "run"))
    state = build_state(cfg)
    trips = toy_triplets()
    train_step(state, trips, cfg, make_provider(cfg))
    state.step, state.epoch = 7, 3
    path = tmp_path / "ck.pt"
    save_checkpoint(path, state, cfg)
    restored, cfg_back = load_checkpoint(path)
    assert cfg_back == cfg
    assert restored.step == 7 and restored.epoch == 3
    for pa, pb in zip(state.generator_parameters(), restored.generator_parameters()):
        assert torch.equal(pa, pb)
    for pa, pb in zip(state.disc.parameters(), restored.disc.parameters()):
        assert torch.equal(pa, pb)
    assert restored.data_rng.bit_generator.state == state.data_rng.bit_generator.state
    assert torch.equal(restored.noise_gen.get_state(), state.noise_gen.get_state())
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    trips = toy_triplets(count=2, texture="checker")
    logs = []
    for name in ("a", "b"):
        cfg = toy_config(mode="roigan", epochs=2, out_dir=str(tmp_path / name), eval_every=1)
        train(cfg, trips)
        out = tmp_path / name
        assert (out / "final.pt").exists()
        assert (out / "checkpoints" / "epoch_0002.pt").exists()
        assert (out / "eval_log.jsonl").exists()
        logs.append((out / "train_log.jsonl").read_bytes())
    assert logs[0] == logs[1]
    records = [json.loads(line) for line in logs[0].splitlines()]
    assert len(records) == 2  # 2 triplets / batch 2 = 1 step per epoch
    assert set(records[0]) >= {"step", "epoch", "lr", "ph", "pe", "s", "d", "g", "synth", "total"}
    assert records[0]["lr"] == 1e-4


def test_train_resume_matches_uninterrupted_run(tmp_path):
    trips = toy_triplets(count=2)
    cfg_full = toy_config(epochs=4, out_dir=str(tmp_path / "full"), eval_every=0)
    state_full = train(cfg_full, trips)

    cfg_half = toy_config(epochs=2, out_dir=str(tmp_path / "half"), eval_every=0)
    train(cfg_half, trips)
    cfg_cont = toy_config(epochs=4, out_dir=str(tmp_path / "cont"), eval_every=0)
    state_cont = train(cfg_cont, trips, resume=tmp_path / "half" / "final.pt")

    assert state_cont.step == state_full.step
    for pa, pb in zip(state_full.generator_parameters(), state_cont.generator_parameters()):
        assert torch.equal(pa, pb)
    # the continued log holds exactly the second half of the full log
    full_lines = (tmp_path / "full" / "train_log.jsonl").read_text().splitlines()
    cont_lines = (tmp_path / "cont" / "train_log.jsonl").read_text().splitlines()
    assert cont_lines == full_lines[len(full_lines) - len(cont_lines):]


def test_train_early_stop_and_max_steps(tmp_path):
    trips = toy_triplets(count=2)
    cfg = toy_config(epochs=50, max_steps=3, out_dir=str(tmp_path / "steps"), eval_every=0)
    state = train(cfg, trips)
    assert state.step == 3
    cfg2 = toy_config(
        epochs=50, stop_at_psnr=-1.0, eval_every=1, out_dir=str(tmp_path / "stop")
    )
    state2 = train(cfg2, trips)
    assert state2.epoch == 1  # any PSNR beats the threshold at the first eval


def test_evaluate_psnr_tracks_quality():
    trips = toy_triplets(count=2)
    cfg = toy_config()
    state = build_state(cfg)
    base = evaluate_psnr(state, trips)
    assert np.isfinite(base) and base > 0
    perfect = [
        FrameTriplet(t.middle_gt, t.middle_gt, t.middle_gt, id=t.id) for t in trips
    ]
    # static scene with identical frames: the untrained model already blends
    # two copies of the target, so PSNR should be clearly higher
    assert evaluate_psnr(state, perfect) > base
