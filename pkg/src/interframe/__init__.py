"""Two-stage video frame interpolation with instance-level adversarial refinement.

A flow network predicts bidirectional flows to the midpoint plus a blending
mask; a synthesis head refines the blend-warped frame with a residual. An
optional patch discriminator scores object regions cut out with RoI align,
trained against higher-resolution real patches.
"""

from .config import apply_overrides, config_from_dict, config_to_dict, load_config, save_config
from .data import (
    FrameTriplet,
    TripletIndex,
    downsample,
    from_tensor,
    index_dataset,
    index_roots,
    load_image,
    save_image,
    to_tensor,
)
from .discriminator import PatchDiscriminator, SpectralNorm, build_discriminator, spectral_normalize
from .features import FeatureExtractor, FeatureExtractorConfig, extract_features
from .flow_net import FlowEstimate, FlowNetConfig, FlowUNet, build_flow_estimator, estimate
from .losses import (
    LossBreakdown,
    LossWeights,
    charbonnier,
    hinge_d_loss,
    hinge_g_loss,
    interpolation_loss,
    perceptual_loss,
    photometric_loss,
    smoothness_loss,
)
from .metrics import (
    MetricsRecord,
    evaluate,
    interpolation_error,
    make_trimap,
    psnr,
    ssim,
    summarize,
    write_metrics_csv,
)
from .roi import (
    PatchPair,
    RoI,
    RoiProvider,
    RoiProviderConfig,
    full_image_roi,
    make_patch_pairs,
    motion_blob_rois,
    propose_rois,
    read_boxes_file,
    roi_align,
    scale_rois,
    write_boxes_file,
)
from .synthesis import SynthesisConfig, SynthesisHead, build_synthesis_head, generator_forward, synthesize
from .synthetic import SyntheticConfig, make_synthetic, write_synthetic_dataset
from .trainer import (
    TrainConfig,
    TrainState,
    augment,
    build_state,
    evaluate_psnr,
    load_checkpoint,
    lr_schedule,
    noise_sigma,
    real_noise,
    save_checkpoint,
    train,
    train_step,
)
from .warping import bilinear_sample, blend_warp

__version__ = "0.1.0"
