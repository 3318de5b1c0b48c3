"""Latent-space operations: AdaIN, forward noising and deterministic DDIM."""

from __future__ import annotations

import math

import numpy as np

from ..errors import BackendError, ParameterError, ShapeError
from ..imaging import Tensor3, as_tensor3
from ..seeding import rng
from .schedule import NoiseSchedule

# content channels flatter than this cannot be renormalized
VAR_EPS = 1e-8


def channel_stats(z: Tensor3) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel population mean and standard deviation over ``(H, W)``."""
    z = as_tensor3(z)
    flat = z.reshape(z.shape[0], -1)
    return flat.mean(axis=1), flat.std(axis=1)


def adain(z_c: Tensor3, z_s: Tensor3) -> Tensor3:
    """Shift and scale each content channel to the style channel's mean and std.

    Spatial sizes may differ; channel counts must match.
    """
    z_c = as_tensor3(z_c)
    z_s = as_tensor3(z_s)
    if z_c.shape[0] != z_s.shape[0]:
        raise ShapeError(f"channel mismatch: content {z_c.shape[0]} vs style {z_s.shape[0]}")
    mu_c, sd_c = channel_stats(z_c)
    mu_s, sd_s = channel_stats(z_s)
    if np.any(sd_c < VAR_EPS):
        bad = np.flatnonzero(sd_c < VAR_EPS).tolist()
        raise ParameterError(f"degenerate content: channels {bad} have (near) zero variance")
    out = (z_c - mu_c[:, None, None]) / sd_c[:, None, None]
    return out * sd_s[:, None, None] + mu_s[:, None, None]


def strength_to_timestep(gamma: float, schedule: NoiseSchedule) -> int:
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError(f"strength must lie in [0, 1], got {gamma}")
    t = int(math.floor(gamma * schedule.T + 0.5))
    return min(max(t, 0), schedule.T)


def draw_noise(shape, seed: int) -> np.ndarray:
    return rng(seed).standard_normal(shape)


def forward_noise(z_init: Tensor3, t: int, eps: Tensor3, schedule: NoiseSchedule) -> Tensor3:
    """``sqrt(ab_t) * z + sqrt(1 - ab_t) * eps``; ``t = 0`` returns ``z_init`` unchanged."""
    z_init = as_tensor3(z_init)
    eps = as_tensor3(eps)
    if eps.shape != z_init.shape:
        raise ShapeError(f"noise shape {eps.shape} != latent shape {z_init.shape}")
    ab = schedule.alpha_bar(t)
    if t == 0:
        return z_init.copy()
    return math.sqrt(ab) * z_init + math.sqrt(1.0 - ab) * eps


def ddim_timesteps(t: int, steps: int) -> list[int]:
    """Evenly spaced, strictly decreasing sub-sequence ``[t, ..., 0]`` with ``steps`` intervals."""
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    if steps > t:
        raise ParameterError(f"cannot take {steps} DDIM steps from timestep {t}")
    taus = {int(math.floor(i * t / steps + 0.5)) for i in range(steps + 1)}
    return sorted(taus, reverse=True)


def ddim_step(z: Tensor3, eps_hat: Tensor3, ab_t: float, ab_prev: float) -> Tensor3:
    """One eta=0 update from a timestep with ``ab_t`` to one with ``ab_prev``."""
    z0_hat = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * z0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def predict_checked(denoiser, z: Tensor3, t: int, token) -> np.ndarray:
    out = np.asarray(denoiser.predict_noise(z, t, token), dtype=np.float64)
    if out.shape != z.shape:
        raise BackendError(f"denoiser returned shape {out.shape} for input {z.shape}")
    if not np.all(np.isfinite(out)):
        raise BackendError(f"denoiser returned non-finite values at t={t}")
    return out


def ddim_decode(z_t: Tensor3, t: int, steps: int, token, denoiser,
                schedule: NoiseSchedule) -> Tensor3:
    """Run deterministic DDIM from timestep ``t`` down to 0.

    The denoiser is called exactly ``steps`` times; ``t = 0`` returns the
    input untouched without calling it.
    """
    z = as_tensor3(z_t).copy()
    if not 0 <= t <= schedule.T:
        raise ParameterError(f"timestep {t} outside [0, {schedule.T}]")
    if t == 0:
        return z
    taus = ddim_timesteps(t, steps)
    for cur, nxt in zip(taus[:-1], taus[1:]):
        eps_hat = predict_checked(denoiser, z, cur, token)
        z = ddim_step(z, eps_hat, schedule.alpha_bar(cur), schedule.alpha_bar(nxt))
    return z


def denoising_loss(denoiser, z0: Tensor3, t: int, eps: Tensor3, token,
                   schedule: NoiseSchedule) -> float:
    """Mean squared error between ``eps`` and the noise predicted from the noised latent."""
    z_t = forward_noise(z0, t, eps, schedule)
    pred = predict_checked(denoiser, z_t, t, token)
    return float(np.mean((np.asarray(eps) - pred) ** 2))
