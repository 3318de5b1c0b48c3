"""Clustered elliptical cell synthesis with exact center ground truth.

The generator places cells around a handful of random cluster centers,
rejecting candidates whose area overlaps already-placed cells by more than a
threshold. The image is built by max-compositing flat-intensity ellipses
over a Gaussian-noise background; the center mask receives one 255 pixel per
accepted cell.

The per-attempt rejection loop runs in a numba kernel. All random draws are
made up front with a numpy ``Generator`` so the kernel itself is
deterministic and RNG-free.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError, ParameterError
from .imaging import CenterMask, GrayImage, Manifest, ManifestRecord, write_manifest, write_png
from .seeding import derive_seed, rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenConfig:
    image_size: tuple[int, int] = (256, 256)
    count_mean: float = 120.0
    count_std: float = 90.0
    count_clamp: tuple[int, int] = (1, 1500)
    clusters_range: tuple[int, int] = (3, 7)
    # standard deviation (pixels) of cell positions around their cluster center
    cluster_spread: float = 22.0
    # full axis length (diameter) around which both ellipse axes are drawn
    cell_size: float = 15.0
    axis_jitter: float = 0.3
    intensity_range: tuple[float, float] = (100.0, 200.0)
    overlap_threshold: float = 0.10
    # None means attempts_per_cell x the cells assigned to the cluster
    max_attempts_per_cluster: int | None = None
    attempts_per_cell: int = 50
    contrast_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (-20.0, 20.0)
    separation_margin: int = 0
    background_noise: tuple[float, float] = (20.0, 10.0)

    def __post_init__(self):
        for name in ("image_size", "count_clamp", "clusters_range", "intensity_range",
                     "contrast_range", "brightness_range", "background_noise"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        H, W = self.image_size
        lo, hi = self.count_clamp
        c_lo, c_hi = self.clusters_range
        i_lo, i_hi = self.intensity_range
        checks = [
            (H >= 1 and W >= 1, "image_size must be positive"),
            (1 <= lo <= hi, "count_clamp needs 1 <= min <= max"),
            (1 <= c_lo <= c_hi, "clusters_range needs 1 <= min <= max"),
            (0.0 <= self.overlap_threshold <= 1.0, "overlap_threshold must lie in [0, 1]"),
            (0 <= i_lo <= i_hi <= 255, "intensity_range must satisfy 0 <= i_min <= i_max <= 255"),
            (self.count_std >= 0, "count_std must be non-negative"),
            (self.cluster_spread >= 0, "cluster_spread must be non-negative"),
            (self.cell_size > 0, "cell_size must be positive"),
            (0 <= self.axis_jitter < 1, "axis_jitter must lie in [0, 1)"),
            (self.contrast_range[0] > 0 and self.contrast_range[0] <= self.contrast_range[1],
             "contrast_range must be positive and ordered"),
            (self.brightness_range[0] <= self.brightness_range[1], "brightness_range must be ordered"),
            (self.separation_margin >= 0, "separation_margin must be non-negative"),
            (self.background_noise[1] >= 0, "background noise std must be non-negative"),
            (self.attempts_per_cell >= 1, "attempts_per_cell must be >= 1"),
            (self.max_attempts_per_cluster is None or self.max_attempts_per_cluster >= 1,
             "max_attempts_per_cluster must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        # the smallest possible cell must fit inside the frame
        if self.cell_size * (1 - self.axis_jitter) > min(H, W):
            raise ConfigError(f"image_size {self.image_size} too small for cell_size {self.cell_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown generator settings: {sorted(unknown)}")
        return cls(**doc)


PRESETS = {
    # count clamp as written in the algorithm listing
    "algorithm": GenConfig(),
    # count clamp as stated in the dataset description
    "prose": GenConfig(count_clamp=(1, 600)),
}


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float
    intensity: float

    def __post_init__(self):
        if not (self.axes[0] > 0 and self.axes[1] > 0):
            raise ParameterError(f"ellipse axes must be positive, got {self.axes}")


@dataclass
class GenOutput:
    image: GrayImage
    mask: CenterMask
    clusters: list[tuple[float, float]]
    placed_count: int
    requested_count: int
    # accepted ellipses in acceptance order, with the overlap fraction each
    # one had against the occupancy grid at the moment it was accepted
    ellipses: list[Ellipse] = field(default_factory=list)
    overlaps: list[float] = field(default_factory=list)
    assignment: list[int] = field(default_factory=list)
    alpha: float = 1.0
    beta: float = 0.0


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True, nogil=True)
def _ellipse_box(cy, cx, a, b, theta, H, W):
    """Clipped bounding box ``(y0, y1, x0, x1)``, half-open, of a rotated ellipse."""
    c = math.cos(theta)
    s = math.sin(theta)
    hx = math.sqrt(a * a * c * c + b * b * s * s)
    hy = math.sqrt(a * a * s * s + b * b * c * c)
    y0 = max(int(math.floor(cy - hy)) - 1, 0)
    y1 = min(int(math.ceil(cy + hy)) + 2, H)
    x0 = max(int(math.floor(cx - hx)) - 1, 0)
    x1 = min(int(math.ceil(cx + hx)) + 2, W)
    return y0, max(y1, y0), x0, max(x1, x0)


@numba.njit(cache=True, nogil=True)
def _inside(py, px, cy, cx, a, b, c, s):
    dx = px - cx
    dy = py - cy
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


@numba.njit(cache=True, nogil=True)
def _raster_into(out, cy, cx, a, b, theta):
    H, W = out.shape
    c = math.cos(theta)
    s = math.sin(theta)
    y0, y1, x0, x1 = _ellipse_box(cy, cx, a, b, theta, H, W)
    for py in range(y0, y1):
        for px in range(x0, x1):
            if _inside(py, px, cy, cx, a, b, c, s):
                out[py, px] = True


@numba.njit(cache=True, nogil=True)
def _place_cluster(canvas, occ, centers, ys, xs, aa, bb, th, it,
                   n_assigned, threshold, margin, accepted, fracs, n_acc):
    """Run the rejection loop for one cluster over pre-drawn candidates.

    Returns ``(placed, attempts_used, n_acc)``; accepted candidate indices and
    their overlap fractions are appended to ``accepted``/``fracs`` starting at
    ``n_acc``.
    """
    H, W = canvas.shape
    placed = 0
    k = 0
    n_cand = ys.shape[0]
    m2 = margin * margin
    while placed < n_assigned and k < n_cand:
        cy = ys[k]
        cx = xs[k]
        a = aa[k]
        b = bb[k]
        theta = th[k]
        c = math.cos(theta)
        s = math.sin(theta)
        iy = int(math.floor(cy + 0.5))
        ix = int(math.floor(cx + 0.5))
        y0, y1, x0, x1 = _ellipse_box(cy, cx, a, b, theta, H, W)
        covered = 0
        hit = 0
        for py in range(y0, y1):
            for px in range(x0, x1):
                if _inside(py, px, cy, cx, a, b, c, s):
                    covered += 1
                    if occ[py, px]:
                        hit += 1
        frac = hit / covered if covered > 0 else 0.0
        ok = covered > 0 and centers[iy, ix] == 0 and (hit == 0 or frac < threshold)
        if ok:
            val = it[k]
            for py in range(y0, y1):
                for px in range(x0, x1):
                    if _inside(py, px, cy, cx, a, b, c, s):
                        if canvas[py, px] < val:
                            canvas[py, px] = val
                        if margin == 0:
                            occ[py, px] = True
                        else:
                            for qy in range(max(py - margin, 0), min(py + margin + 1, H)):
                                for qx in range(max(px - margin, 0), min(px + margin + 1, W)):
                                    if (qy - py) * (qy - py) + (qx - px) * (qx - px) <= m2:
                                        occ[qy, qx] = True
            centers[iy, ix] = 255
            accepted[n_acc] = k
            fracs[n_acc] = frac
            n_acc += 1
            placed += 1
        k += 1
    return placed, k, n_acc


# ------------------------------------------------------------ public helpers

def rasterize_ellipse(e: Ellipse, size: tuple[int, int]) -> np.ndarray:
    """Boolean ``(H, W)`` grid of pixels whose centers satisfy the ellipse inequality.

    Pixel ``(py, px)`` has its center at integer coordinates; the test is
    ``((dx cos t + dy sin t)/a)^2 + ((-dx sin t + dy cos t)/b)^2 <= 1``.
    """
    out = np.zeros(size, dtype=np.bool_)
    _raster_into(out, float(e.center[0]), float(e.center[1]),
                 float(e.axes[0]), float(e.axes[1]), float(e.angle))
    return out


def overlap_fraction(e: Ellipse, occupancy: np.ndarray) -> float:
    cover = rasterize_ellipse(e, occupancy.shape)
    n = np.count_nonzero(cover)
    if n == 0:
        return 0.0
    return np.count_nonzero(cover & occupancy) / n


def _affine_clip(arr: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    return np.clip(np.floor(alpha * arr.astype(np.float64) + beta + 0.5), 0, 255).astype(np.uint8)


def apply_contrast_brightness(img: GrayImage, alpha: float, beta: float) -> GrayImage:
    """``clip(round(alpha * img + beta), 0, 255)``."""
    if not alpha > 0:
        raise ParameterError(f"contrast alpha must be positive, got {alpha}")
    return GrayImage(_affine_clip(img.pixels, alpha, beta))


def _positions_in_bounds(g: np.random.Generator, center, spread, n, H, W):
    """``n`` Gaussian positions around ``center``; out-of-frame draws are redrawn."""
    ys = np.empty(n)
    xs = np.empty(n)
    filled = 0
    while filled < n:
        want = max(2 * (n - filled), 16)
        y = g.normal(center[0], spread, want)
        x = g.normal(center[1], spread, want)
        keep = (y >= 0) & (y <= H - 1) & (x >= 0) & (x <= W - 1)
        y, x = y[keep], x[keep]
        take = min(n - filled, y.size)
        ys[filled:filled + take] = y[:take]
        xs[filled:filled + take] = x[:take]
        filled += take
    return ys, xs


def requested_count(config: GenConfig, g: np.random.Generator) -> int:
    n = int(np.floor(g.normal(config.count_mean, config.count_std) + 0.5))
    lo, hi = config.count_clamp
    return min(max(n, lo), hi)


def generate(config: GenConfig, seed: int) -> GenOutput:
    """Synthesize one image and its center mask; fully determined by ``(config, seed)``."""
    config.validate()
    H, W = config.image_size
    g = rng(seed)

    c_lo, c_hi = config.clusters_range
    n_clusters = int(g.integers(c_lo, c_hi + 1))
    n = requested_count(config, g)

    mean, std = config.background_noise
    canvas = np.clip(g.normal(mean, std, (H, W)), 0, 255)
    centers = np.zeros((H, W), dtype=np.uint8)
    clusters = [(float(g.uniform(0, H - 1)), float(g.uniform(0, W - 1))) for _ in range(n_clusters)]

    base, extra = divmod(n, n_clusters)
    assignment = [base + (1 if i < extra else 0) for i in range(n_clusters)]

    occ = np.zeros((H, W), dtype=np.bool_)
    lo_ax = 0.5 * config.cell_size * (1 - config.axis_jitter)
    hi_ax = 0.5 * config.cell_size * (1 + config.axis_jitter)
    i_lo, i_hi = config.intensity_range
    accepted = np.empty(n, dtype=np.int64)
    fracs = np.empty(n, dtype=np.float64)
    n_acc = 0
    ellipses: list[Ellipse] = []
    placed_total = 0

    for center, k in zip(clusters, assignment):
        if k == 0:
            continue
        budget = config.max_attempts_per_cluster or config.attempts_per_cell * k
        aa = g.uniform(lo_ax, hi_ax, budget)
        bb = g.uniform(lo_ax, hi_ax, budget)
        th = g.uniform(0.0, np.pi, budget)
        ys, xs = _positions_in_bounds(g, center, config.cluster_spread, budget, H, W)
        it = g.uniform(i_lo, i_hi, budget)
        start = n_acc
        placed, _, n_acc = _place_cluster(
            canvas, occ, centers, ys, xs, aa, bb, th, it,
            k, float(config.overlap_threshold), int(config.separation_margin),
            accepted, fracs, n_acc,
        )
        placed_total += placed
        for j in accepted[start:n_acc]:
            ellipses.append(Ellipse((float(ys[j]), float(xs[j])), (float(aa[j]), float(bb[j])),
                                    float(th[j]), float(it[j])))

    alpha = float(g.uniform(*config.contrast_range))
    beta = float(g.uniform(*config.brightness_range))
    image = GrayImage(_affine_clip(canvas, alpha, beta))
    return GenOutput(
        image=image,
        mask=CenterMask(centers),
        clusters=clusters,
        placed_count=placed_total,
        requested_count=n,
        ellipses=ellipses,
        overlaps=[float(f) for f in fracs[:n_acc]],
        assignment=assignment,
        alpha=alpha,
        beta=beta,
    )


def generate_dataset(config: GenConfig, n_images: int, base_seed: int, out_dir,
                     jobs: int = 1) -> Manifest:
    """Write ``n_images`` image/mask PNG pairs plus ``manifest.jsonl`` under ``out_dir``.

    Image ``i`` is generated with seed ``derive_seed(base_seed, i)``, so the
    output does not depend on ``jobs``.
    """
    if n_images < 0:
        raise ParameterError("n_images must be non-negative")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def one(i: int) -> ManifestRecord:
        seed = derive_seed(base_seed, i)
        res = generate(config, seed)
        img_rel = f"images/syn_{i:05d}.png"
        mask_rel = f"masks/syn_{i:05d}.png"
        write_png(out / img_rel, res.image)
        write_png(out / mask_rel, res.mask)
        return ManifestRecord(img_rel, res.placed_count, seed, mask_rel, [f"clusters={len(res.clusters)}"])

    if jobs > 1 and n_images > 1:
        with ThreadPoolExecutor(jobs) as ex:
            records = list(ex.map(one, range(n_images)))
    else:
        records = [one(i) for i in range(n_images)]
    manifest = Manifest(records, out)
    write_manifest(out / "manifest.jsonl", manifest)
    log.info("wrote %d images to %s", n_images, os.fspath(out))
    return manifest
