"""Count-preserving CutMix and cross-domain (DACS-style) batch mixing.

Regression targets for mixed samples are never interpolated from the mixing
ratio: the center masks are cut and pasted exactly like the images, and the
target is the number of centers left in the mixed mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .imaging import CenterMask, GrayImage, Manifest
from .seeding import derive_seed, rng


@dataclass(frozen=True)
class CutMixConfig:
    alpha: float = 1.0
    probability: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"Beta concentration must be positive, got {self.alpha}")
        if not 0.0 <= self.probability <= 1.0:
            raise ParameterError(f"mix probability must lie in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class MixBox:
    """Half-open pixel box ``[y0, y1) x [x0, x1)``."""

    y0: int
    x0: int
    y1: int
    x1: int

    @property
    def area(self) -> int:
        return (self.y1 - self.y0) * (self.x1 - self.x0)

    def contains(self, y: int, x: int) -> bool:
        return self.y0 <= y < self.y1 and self.x0 <= x < self.x1

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


EMPTY_BOX = MixBox(0, 0, 0, 0)


@dataclass
class MixedSample:
    image: GrayImage
    mask: CenterMask
    count: int
    lam: float
    box: MixBox
    mixed: bool


def sample_beta(alpha: float, g: np.random.Generator) -> float:
    """Beta(alpha, alpha) draw as a ratio of two unit-scale Gamma draws."""
    x = g.gamma(alpha)
    y = g.gamma(alpha)
    if x + y == 0.0:
        # both gammas underflowed (tiny alpha); the limit is a fair coin flip
        return float(g.integers(2))
    return float(x / (x + y))


def box_from_center(lam_raw: float, H: int, W: int, cy: float, cx: float) -> MixBox:
    cut = math.sqrt(1.0 - lam_raw)
    h = int(math.floor(H * cut))
    w = int(math.floor(W * cut))
    y0 = min(max(int(math.floor(cy - h / 2)), 0), H)
    x0 = min(max(int(math.floor(cx - w / 2)), 0), W)
    y1 = min(max(int(math.floor(cy + h / 2)), 0), H)
    x1 = min(max(int(math.floor(cx + w / 2)), 0), W)
    return MixBox(y0, x0, max(y1, y0), max(x1, x0))


def sample_box(lam_raw: float, H: int, W: int, seed: int) -> tuple[MixBox, float]:
    """CutMix box with side ratio ``sqrt(1 - lam_raw)`` and a uniform center, clipped to the frame.

    Returns the box and the realized ratio ``1 - area / (H * W)``.
    """
    if H < 1 or W < 1:
        raise ShapeError("box needs a non-empty frame")
    if not 0.0 <= lam_raw <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam_raw}")
    g = rng(seed)
    cy = g.uniform(0, H)
    cx = g.uniform(0, W)
    box = box_from_center(lam_raw, H, W, cy, cx)
    return box, 1.0 - box.area / (H * W)


def mix_with_box(a_img: GrayImage, a_mask: CenterMask, b_img: GrayImage, b_mask: CenterMask,
                 box: MixBox) -> MixedSample:
    """Paste the ``box`` region of B into A."""
    shapes = {a_img.shape, a_mask.shape, b_img.shape, b_mask.shape}
    if len(shapes) != 1:
        raise ShapeError(f"all planes must share one shape, got {sorted(shapes)}")
    H, W = a_img.shape
    if not (0 <= box.y0 <= box.y1 <= H and 0 <= box.x0 <= box.x1 <= W):
        raise ShapeError(f"box {box} outside {H}x{W} frame")
    sl = box.slices()
    img = a_img.pixels.copy()
    img[sl] = b_img.pixels[sl]
    mask = a_mask.pixels.copy()
    mask[sl] = b_mask.pixels[sl]
    mixed = CenterMask(mask)
    return MixedSample(GrayImage(img), mixed, mixed.count, 1.0 - box.area / (H * W), box, True)


def cutmix(a_img: GrayImage, a_mask: CenterMask, b_img: GrayImage, b_mask: CenterMask,
           config: CutMixConfig, seed: int) -> MixedSample:
    """With probability ``config.probability`` paste a Beta-sized box of B into A."""
    shapes = {a_img.shape, a_mask.shape, b_img.shape, b_mask.shape}
    if len(shapes) != 1:
        raise ShapeError(f"all planes must share one shape, got {sorted(shapes)}")
    g = rng(seed)
    if not g.uniform() < config.probability:
        return MixedSample(a_img, a_mask, a_mask.count, 1.0, EMPTY_BOX, False)
    lam_raw = sample_beta(config.alpha, g)
    H, W = a_img.shape
    box, _ = sample_box(lam_raw, H, W, int(g.integers(2**63)))
    return mix_with_box(a_img, a_mask, b_img, b_mask, box)


def random_crop(img: GrayImage, mask: CenterMask, size: tuple[int, int],
                g: np.random.Generator) -> tuple[GrayImage, CenterMask]:
    h, w = size
    H, W = img.shape
    if h > H or w > W:
        raise ShapeError(f"crop {h}x{w} larger than image {H}x{W}")
    y = int(g.integers(0, H - h + 1))
    x = int(g.integers(0, W - w + 1))
    return (GrayImage(img.pixels[y:y + h, x:x + w]), CenterMask(mask.pixels[y:y + h, x:x + w]))


def _pick(n_pool: int, k: int, g: np.random.Generator) -> np.ndarray:
    return g.choice(n_pool, size=k, replace=n_pool < k)


def dacs_batch(real_pool: Manifest, syn_pool: Manifest, per_domain: int = 8,
               config: CutMixConfig = CutMixConfig(), seed: int = 0,
               crop: tuple[int, int] | None = (200, 200),
               syn_into_real: bool = True) -> list[MixedSample]:
    """One mixed batch: ``per_domain`` real and synthetic records paired and CutMixed.

    Records are drawn without replacement when the pool is large enough.
    Each source is cropped to ``crop`` (capped at the smaller image of the
    pair) before mixing. By default the synthetic box is pasted into the
    real image; ``syn_into_real=False`` reverses the direction.
    """
    if len(real_pool) == 0 or len(syn_pool) == 0:
        raise DataError("both pools must be non-empty")
    if per_domain < 1:
        raise ParameterError("per_domain must be >= 1")
    g = rng(seed)
    real_idx = _pick(len(real_pool), per_domain, g)
    syn_idx = _pick(len(syn_pool), per_domain, g)
    out = []
    for j, (ri, si) in enumerate(zip(real_idx, syn_idx)):
        r_img, r_mask = real_pool.load_image(int(ri)), real_pool.load_mask(int(ri))
        s_img, s_mask = syn_pool.load_image(int(si)), syn_pool.load_mask(int(si))
        if crop is not None:
            h = min(crop[0], r_img.height, s_img.height)
            w = min(crop[1], r_img.width, s_img.width)
            r_img, r_mask = random_crop(r_img, r_mask, (h, w), g)
            s_img, s_mask = random_crop(s_img, s_mask, (h, w), g)
        a, b = ((r_img, r_mask), (s_img, s_mask)) if syn_into_real else ((s_img, s_mask), (r_img, r_mask))
        out.append(cutmix(a[0], a[1], b[0], b[1], config, derive_seed(seed, j)))
    return out
