"""Content/style latent blending followed by partial noising and DDIM decoding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..errors import ParameterError
from ..imaging import GrayImage
from .ops import adain, ddim_decode, draw_noise, forward_noise, strength_to_timestep
from .schedule import NoiseSchedule
from .tokens import StyleToken

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StylizeParams:
    strength: float = 0.7
    sampling_steps: int = 50
    token: StyleToken = field(default_factory=StyleToken.zeros)
    noise_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ParameterError(f"strength must lie in [0, 1], got {self.strength}")
        if self.strength > 0 and self.sampling_steps < 1:
            raise ParameterError("sampling_steps must be >= 1 when strength > 0")


def initial_latent(x_c: GrayImage, x_s: GrayImage, codec):
    return adain(codec.encode(x_c), codec.encode(x_s))


def stylize(x_c: GrayImage, x_s: GrayImage, params: StylizeParams, denoiser, codec,
            schedule: NoiseSchedule) -> GrayImage:
    """Render ``x_c`` in the appearance of ``x_s``.

    ``denoiser`` may also be a callable taking the blended initial latent and
    returning a denoiser; oracle backends need that latent to exist first.
    """
    z_init = initial_latent(x_c, x_s, codec)
    t = strength_to_timestep(params.strength, schedule)
    if t == 0:
        return codec.decode(z_init)
    steps = params.sampling_steps
    if steps > t:
        log.info("reducing DDIM steps from %d to %d for timestep %d", steps, t, t)
        steps = t
    if not hasattr(denoiser, "predict_noise") and callable(denoiser):
        denoiser = denoiser(z_init)
    eps = draw_noise(z_init.shape, params.noise_seed)
    z_t = forward_noise(z_init, t, eps, schedule)
    z_hat = ddim_decode(z_t, t, steps, params.token, denoiser, schedule)
    return codec.decode(z_hat)
