"""Training objectives.

Interpolation side: Charbonnier photometric + first-order gradient loss,
perceptual (frozen-extractor feature L1) loss, and total-variation
smoothness on the flows and blending mask, combined as

    L_synth = lambda0 * (L_ph(warped) + L_ph(refined))
            + lambda1 * (L_pe(warped) + L_pe(refined))
            + lambda2 * L_s

Adversarial side: hinge losses over per-RoI discriminator scores,

    L_d = mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))
    L_g = -mean(D(fake))

and the grand total L = L_synth + lambda3 * L_d + lambda4 * L_g.

NOTE on the hinge sign: the source formulation we follow writes the
discriminator objective with min(0, .) terms, which is non-positive and
degenerate as a minimization target. We implement the standard spectral-norm
hinge discriminator loss above (its negation), which is the form the
surrounding GAN practice actually optimizes.

Image gradients use forward differences with the last row/column cropped
(no padding), so constant offsets contribute nothing to gradient terms.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .features import FeatureExtractor
from .flow_net import FlowEstimate


@dataclass
class LossWeights:
    lambda0: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 0.01
    lambda3: float = 0.1
    lambda4: float = 0.01
    charbonnier_eps: float = 1e-3
    charbonnier_alpha: float = 0.45

    def validate(self) -> None:
        for name in ("lambda0", "lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.charbonnier_eps <= 0:
            raise ValueError("charbonnier_eps must be > 0")
        if not 0 < self.charbonnier_alpha <= 1:
            raise ValueError("charbonnier_alpha must be in (0, 1]")


@dataclass
class LossBreakdown:
    """Per-step scalar loss components, for logging.

    synth = lambda0*ph + lambda1*pe + lambda2*s
    total = synth + lambda3*d + lambda4*g
    """

    ph: float = 0.0
    pe: float = 0.0
    s: float = 0.0
    d: float = 0.0
    g: float = 0.0
    synth: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "ph": self.ph,
            "pe": self.pe,
            "s": self.s,
            "d": self.d,
            "g": self.g,
            "synth": self.synth,
            "total": self.total,
        }


def charbonnier(x: torch.Tensor, eps: float = 1e-3, alpha: float = 0.45) -> torch.Tensor:
    """Robust penalty: mean of (x^2 + eps^2)^alpha over all elements."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return (x * x + eps * eps).pow(alpha).mean()


def _dx(t: torch.Tensor) -> torch.Tensor:
    return t[..., :, 1:] - t[..., :, :-1]


def _dy(t: torch.Tensor) -> torch.Tensor:
    return t[..., 1:, :] - t[..., :-1, :]


def photometric_loss(
    pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-3, alpha: float = 0.45
) -> torch.Tensor:
    """Charbonnier on the color residual plus both first-order gradient residuals."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (
        charbonnier(pred - gt, eps, alpha)
        + charbonnier(_dx(pred) - _dx(gt), eps, alpha)
        + charbonnier(_dy(pred) - _dy(gt), eps, alpha)
    )


def perceptual_loss(
    pred: torch.Tensor, gt: torch.Tensor, extractor: FeatureExtractor
) -> torch.Tensor:
    """Mean absolute difference between frozen-extractor features of pred and gt."""
    return (extractor(pred) - extractor(gt)).abs().mean()


def _tv(field: torch.Tensor) -> torch.Tensor:
    # per-channel means of |forward difference|, summed over channels
    return _dx(field).abs().mean(dim=(0, 2, 3)).sum() + _dy(field).abs().mean(dim=(0, 2, 3)).sum()


def smoothness_loss(est: FlowEstimate) -> torch.Tensor:
    """Total variation of both flows and the blending mask."""
    return _tv(est.flow_1t) + _tv(est.flow_2t) + _tv(est.mask)


def interpolation_loss(
    warped: torch.Tensor,
    refined: torch.Tensor,
    gt: torch.Tensor,
    est: FlowEstimate,
    weights: LossWeights,
    perceptual_extractor: FeatureExtractor | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Combined interpolation objective over both the warped and refined images.

    Returns (synth_loss, components) where components holds the unweighted
    ph / pe / s terms as tensors.
    """
    if warped.shape != gt.shape or refined.shape != gt.shape:
        raise ValueError("warped/refined/gt shapes disagree")
    eps, alpha = weights.charbonnier_eps, weights.charbonnier_alpha
    ph = photometric_loss(warped, gt, eps, alpha) + photometric_loss(refined, gt, eps, alpha)
    if perceptual_extractor is not None:
        pe = perceptual_loss(warped, gt, perceptual_extractor) + perceptual_loss(
            refined, gt, perceptual_extractor
        )
    else:
        pe = torch.zeros((), dtype=gt.dtype, device=gt.device)
    s = smoothness_loss(est)
    synth = weights.lambda0 * ph + weights.lambda1 * pe + weights.lambda2 * s
    return synth, {"ph": ph, "pe": pe, "s": s}


def _as_scores(scores) -> torch.Tensor:
    t = scores if isinstance(scores, torch.Tensor) else torch.as_tensor(scores, dtype=torch.float64)
    if t.numel() == 0:
        raise ValueError("score list must be nonempty")
    return t.reshape(-1)


def hinge_d_loss(scores_real, scores_fake) -> torch.Tensor:
    """Hinge discriminator loss: real pushed above +1, fake below -1."""
    real = _as_scores(scores_real)
    fake = _as_scores(scores_fake)
    return F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()


def hinge_g_loss(scores_fake) -> torch.Tensor:
    """Hinge generator loss: maximize fake scores."""
    return -_as_scores(scores_fake).mean()
