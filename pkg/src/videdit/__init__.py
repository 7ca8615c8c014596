"""Desk-scale control-conditioned video-editing engine in a toy latent space."""

from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    build_schedule,
    cfg_combine,
    ddim_invert_step,
    ddim_step,
    forward_sample,
    make_initial_value,
    training_residual,
)
from .model import (
    ControlStack,
    Denoiser,
    ModelConfig,
    PromptEmbedding,
    apply_mask_to_controls,
    attach_lora,
    control_fusion,
    embed_prompt,
    key_frame_attention,
    predict_noise,
    self_attention,
    temporal_attention,
)
from .longvideo import (
    KeyFusionConfig,
    WeightFunction,
    WindowPlan,
    eval_weights,
    extract_keyframe_video,
    fuse_keyframe,
    fuse_windows,
    long_edit,
    plan_windows,
)
from .editing import edit
from .training import TrainConfig, count_trainable, lora_pretrain, one_shot_finetune
from .metrics import MetricReport, drift, ssim, temporal_consistency

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
