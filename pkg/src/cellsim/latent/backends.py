"""Pluggable denoiser and codec backends.

Real deployments would wrap a pretrained autoencoder and UNet behind the
``LatentCodec`` and ``Denoiser`` protocols. The implementations here are
closed-form stand-ins used by the CLI and the test suite.
"""

from __future__ import annotations

import importlib
import math
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import BackendError, ShapeError
from ..imaging import GrayImage, Tensor3, as_tensor3, from_real, to_real
from .schedule import NoiseSchedule


@runtime_checkable
class Denoiser(Protocol):
    def predict_noise(self, z_t: Tensor3, t: int, token) -> Tensor3: ...


@runtime_checkable
class LatentCodec(Protocol):
    def encode(self, img: GrayImage) -> Tensor3: ...

    def decode(self, z: Tensor3) -> GrayImage: ...


def _token_values(token) -> np.ndarray:
    return np.asarray(getattr(token, "values", token), dtype=np.float64)


class ToyCodec:
    """Block-average encoder with nearest-neighbour decoder.

    Each latent cell is the mean of a ``factor x factor`` pixel block, so an
    ``H x W`` image maps to a ``1 x H/factor x W/factor`` latent.
    """

    def __init__(self, factor: int = 8):
        self.factor = factor

    def encode(self, img: GrayImage) -> Tensor3:
        f = self.factor
        H, W = img.shape
        if H % f or W % f:
            raise ShapeError(f"image {H}x{W} is not divisible by {f}")
        x = to_real(img)[0]
        return x.reshape(H // f, f, W // f, f).mean(axis=(1, 3))[None]

    def decode(self, z: Tensor3) -> GrayImage:
        z = as_tensor3(z)
        f = self.factor
        return from_real(np.repeat(np.repeat(z, f, axis=1), f, axis=2))


def toy_codec() -> ToyCodec:
    return ToyCodec(8)


class ZeroDenoiser:
    """Predicts zero noise everywhere."""

    def predict_noise(self, z_t, t, token):
        return np.zeros_like(np.asarray(z_t, dtype=np.float64))


class NoiseOracle:
    """Returns the fixed noise tensor that was used to noise the latent."""

    def __init__(self, eps: Tensor3):
        self.eps = as_tensor3(eps)
        self.calls = 0

    def predict_noise(self, z_t, t, token):
        self.calls += 1
        return self.eps.copy()


class CleanLatentOracle:
    """Recovers the exact noise from a known clean latent.

    For ``z_t = sqrt(ab) z0 + sqrt(1 - ab) eps`` this returns ``eps`` for any
    ``eps``, which makes deterministic DDIM reproduce ``z0`` exactly.
    """

    def __init__(self, clean: Tensor3, schedule: NoiseSchedule):
        self.clean = as_tensor3(clean)
        self.schedule = schedule
        self.calls = 0

    def predict_noise(self, z_t, t, token):
        self.calls += 1
        if t == 0:
            return np.zeros_like(self.clean)
        ab = self.schedule.alpha_bar(t)
        return (np.asarray(z_t) - math.sqrt(ab) * self.clean) / math.sqrt(1.0 - ab)


class TokenOffsetDenoiser:
    """Oracle prediction plus a token-dependent bias.

    Prediction is ``eps_true + tile(token - target)`` over the latent, so the
    denoising loss is a quadratic bowl in the token with minimizer ``target``.
    """

    def __init__(self, clean: Tensor3, schedule: NoiseSchedule, target):
        self.oracle = CleanLatentOracle(clean, schedule)
        self.target = _token_values(target)

    def predict_noise(self, z_t, t, token):
        delta = _token_values(token) - self.target
        return self.oracle.predict_noise(z_t, t, token) + np.resize(delta, np.shape(z_t))


class GaussianPriorDenoiser:
    """Exact noise predictor for latents drawn i.i.d. from ``N(m, s^2)``.

    The token supplies the prior: ``m = token[0]`` and ``s = exp(token[1])``.
    Fitting a token to a set of style latents with this backend therefore
    learns their mean and spread.
    """

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def predict_noise(self, z_t, t, token):
        v = _token_values(token)
        m = v[0] if v.size > 0 else 0.0
        s2 = math.exp(2.0 * v[1]) if v.size > 1 else 1.0
        ab = self.schedule.alpha_bar(t)
        return math.sqrt(1.0 - ab) * (np.asarray(z_t) - math.sqrt(ab) * m) / (ab * s2 + 1.0 - ab)


class LinearMapper:
    """Affine map from a style embedding to a conditioning token."""

    def __init__(self, weight, bias=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(self.weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)

    def __call__(self, embedding) -> np.ndarray:
        return self.weight @ np.asarray(embedding, dtype=np.float64) + self.bias


def load_object(spec: str):
    """Import ``"package.module:attr"`` and return the attribute."""
    mod_name, _, attr = spec.partition(":")
    if not mod_name or not attr:
        raise BackendError(f"backend spec must look like 'module:attr', got {spec!r}")
    try:
        obj = importlib.import_module(mod_name)
        for part in attr.split("."):
            obj = getattr(obj, part)
    except (ImportError, AttributeError) as exc:
        raise BackendError(f"cannot load backend {spec!r}: {exc}") from exc
    return obj
