"""Flow-matching dual-branch model: noising, architecture, losses and sampling."""

from .flow import FlowError, NoisySample, clean_mask, make_noisy, skip_coefficients, velocity_target
from .layers import dit_block, linear, multi_head_attention, timestep_features
from .model import (
    A_DEPTH,
    MODES,
    DualModelParams,
    DualOutput,
    LossBreakdown,
    ModelConfig,
    ModelError,
    dual_forward,
    expand_to_dual,
    fuse_features,
    init_dual_model,
    init_motion_query,
    init_video_model,
    latents_to_tokens,
    module_a,
    module_a_layer,
    regroup_queries,
    sample_layers,
    smpl_loss,
    tokens_to_latents,
    total_loss,
    video_forward,
)
from .sampler import SampleResult, euler_sample, guided_velocity, sample
