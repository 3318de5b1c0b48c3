"""Style tokens and black-box token fitting.

The denoiser is treated as a black box: the token is fitted from loss
evaluations only, using two-sided simultaneous-perturbation gradient
estimates fed to an Adam update.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import FormatError, ParameterError
from ..imaging import Tensor3, as_tensor3
from ..seeding import rng
from .ops import forward_noise, predict_checked
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

DEFAULT_DIM = 768


@dataclass(frozen=True, eq=False)
class StyleToken:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ParameterError("style token must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM) -> "StyleToken":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, StyleToken):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


def write_token(path: str | os.PathLike, token: StyleToken) -> None:
    """Little-endian uint32 dimension followed by that many float64 values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", token.dim))
        fh.write(token.values.astype("<f8").tobytes())


def read_token(path: str | os.PathLike) -> StyleToken:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: token file truncated")
    (d,) = struct.unpack_from("<I", blob)
    if len(blob) != 4 + 8 * d:
        raise FormatError(f"{path}: expected {4 + 8 * d} bytes for d={d}, found {len(blob)}")
    return StyleToken(np.frombuffer(blob, dtype="<f8", offset=4).astype(np.float64))


@dataclass
class FitResult:
    token: StyleToken
    initial_loss: float
    final_loss: float
    best_step: int
    history: list[float] = field(default_factory=list)


def fit_style_token(
    denoiser,
    style_latents: Sequence[Tensor3],
    schedule: NoiseSchedule,
    steps: int = 1000,
    step_size: float = 5e-4,
    seed: int = 0,
    *,
    init: StyleToken | None = None,
    dim: int = DEFAULT_DIM,
    perturbation: float = 1e-2,
    directions: int = 256,
    avg_decay: float = 0.9,
    betas: tuple[float, float] = (0.9, 0.999),
    adam_eps: float = 1e-8,
) -> FitResult:
    """Fit a conditioning token by minimizing the expected denoising loss.

    Each step draws one ``(latent, t, noise)`` triple and noises the latent
    once. ``directions`` Rademacher perturbations of size ``perturbation`` are
    then evaluated on both sides with that same draw, and their averaged
    SPSA estimate drives an Adam step of size ``step_size``.

    The returned token is the iterate with the lowest running average of the
    unperturbed per-step loss (exponential average with ``avg_decay``).
    """
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    if directions < 1:
        raise ParameterError("directions must be >= 1")
    if not style_latents:
        raise ParameterError("need at least one style latent")
    latents = [as_tensor3(z) for z in style_latents]
    theta = (init.values if init is not None else np.zeros(dim)).astype(np.float64).copy()
    g = rng(seed)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas

    def loss_at(tok, eps, z_t, t):
        pred = predict_checked(denoiser, z_t, t, tok)
        return float(np.mean((eps - pred) ** 2))

    history = []
    avg = 0.0
    best = (math.inf, theta.copy(), 0)
    initial = None
    for k in range(1, steps + 1):
        z0 = latents[int(g.integers(len(latents)))]
        t = int(g.integers(1, schedule.T + 1))
        eps = g.standard_normal(z0.shape)
        z_t = forward_noise(z0, t, eps, schedule)
        deltas = g.choice(np.array([-1.0, 1.0]), size=(directions, theta.size))
        grad = np.zeros_like(theta)
        for delta in deltas:
            up = loss_at(theta + perturbation * delta, eps, z_t, t)
            down = loss_at(theta - perturbation * delta, eps, z_t, t)
            grad += (up - down) / (2.0 * perturbation) * delta
        grad /= directions
        step_loss = loss_at(theta, eps, z_t, t)
        if initial is None:
            initial = step_loss

        avg = avg_decay * avg + (1 - avg_decay) * step_loss
        smoothed = avg / (1 - avg_decay ** k)
        history.append(smoothed)
        if smoothed <= best[0]:
            best = (smoothed, theta.copy(), k)

        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** k)
        v_hat = v / (1 - b2 ** k)
        theta -= step_size * m_hat / (np.sqrt(v_hat) + adam_eps)

        if k % 100 == 0:
            log.debug("step %d running loss %.6g", k, smoothed)

    return FitResult(
        token=StyleToken(best[1]),
        initial_loss=float(initial),
        final_loss=float(history[-1]),
        best_step=best[2],
        history=history,
    )
