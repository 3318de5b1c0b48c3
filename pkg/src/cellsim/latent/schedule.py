"""Discrete diffusion noise schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError

KINDS = ("linear", "scaled_linear")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step betas and cumulative alpha products.

    ``betas[t - 1]`` is beta_t for ``t = 1..T``; ``alpha_bars[t]`` is the
    product of ``1 - beta_s`` for ``s <= t``, with ``alpha_bars[0] == 1``.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64).ravel()
        if betas.size < 1:
            raise ParameterError("a schedule needs at least one timestep")
        if not np.all((betas > 0) & (betas < 1)):
            raise ParameterError("every beta must lie strictly between 0 and 1")
        alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        return cls(betas, alpha_bars)

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside [1, {self.T}]")
        return float(self.betas[t - 1])


def make_schedule(T: int = 1000, beta_start: float = 0.00085, beta_end: float = 0.012,
                  kind: str = "scaled_linear") -> NoiseSchedule:
    """Build a schedule.

    ``linear`` spaces beta evenly; ``scaled_linear`` spaces sqrt(beta) evenly
    and squares it. The defaults are the usual latent-diffusion settings.
    """
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    T = int(T)
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T) ** 2
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    return NoiseSchedule.from_betas(betas)


def schedule_table(schedule: NoiseSchedule) -> str:
    """Tab-separated ``t, beta_t, alpha_bar_t`` rows, 12 significant digits."""
    lines = ["t\tbeta\talpha_bar"]
    for t in range(1, schedule.T + 1):
        lines.append(f"{t}\t{schedule.beta(t):.12g}\t{schedule.alpha_bar(t):.12g}")
    return "\n".join(lines) + "\n"
