"""Latent style-transfer math against pluggable codec/denoiser backends."""

from .backends import (
    CleanLatentOracle,
    Denoiser,
    GaussianPriorDenoiser,
    LatentCodec,
    LinearMapper,
    NoiseOracle,
    TokenOffsetDenoiser,
    ToyCodec,
    ZeroDenoiser,
    load_object,
    toy_codec,
)
from .ops import (
    adain,
    channel_stats,
    ddim_decode,
    ddim_step,
    ddim_timesteps,
    denoising_loss,
    draw_noise,
    forward_noise,
    strength_to_timestep,
)
from .pipeline import StylizeParams, initial_latent, stylize
from .schedule import NoiseSchedule, make_schedule, schedule_table
from .tokens import FitResult, StyleToken, fit_style_token, read_token, write_token
