"""Counting evaluation: tiling, counters, error metrics and stratified splits."""

from __future__ import annotations

import json
import logging
import math
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .errors import BackendError, DataError, ParameterError
from .imaging import CenterMask, GrayImage, Manifest, write_png
from .seeding import rng

log = logging.getLogger(__name__)

POLICIES = ("drop_partial", "pad_zero")


@runtime_checkable
class Counter(Protocol):
    def count(self, window: GrayImage) -> float: ...


# ---------------------------------------------------------------------- tiling

def tile_origins(shape: tuple[int, int], window: tuple[int, int],
                 policy: str = "drop_partial") -> list[tuple[int, int]]:
    H, W = shape
    h, w = window
    if h < 1 or w < 1:
        raise ParameterError(f"window must be positive, got {window}")
    if policy == "drop_partial":
        ny, nx = H // h, W // w
        if ny == 0 or nx == 0:
            log.warning("window %dx%d larger than image %dx%d; no tiles", h, w, H, W)
    elif policy == "pad_zero":
        ny, nx = -(-H // h), -(-W // w)
    else:
        raise ParameterError(f"unknown edge policy {policy!r}; expected one of {POLICIES}")
    return [(i * h, j * w) for i in range(ny) for j in range(nx)]


def _cut(arr: np.ndarray, y: int, x: int, h: int, w: int) -> np.ndarray:
    piece = arr[y:y + h, x:x + w]
    if piece.shape == (h, w):
        return piece
    out = np.zeros((h, w), dtype=arr.dtype)
    out[:piece.shape[0], :piece.shape[1]] = piece
    return out


def tile(image: GrayImage, window: tuple[int, int], policy: str = "drop_partial") -> list[GrayImage]:
    """Non-overlapping windows in row-major order from the top-left corner."""
    h, w = window
    return [GrayImage(_cut(image.pixels, y, x, h, w))
            for y, x in tile_origins(image.shape, window, policy)]


# -------------------------------------------------------------------- counters

@dataclass(frozen=True)
class BlobCounterConfig:
    """Connected components above a threshold.

    ``threshold`` is either a fixed intensity or ``"auto"``. The automatic
    level is ``max(otsu, median + 3 * max(1.4826 * MAD, 8))``: Otsu's split
    when the image is bimodal, never lower than a robust estimate of the
    background noise ceiling. The floor of 8 gray levels keeps the estimate
    sane when most of the background clips to zero.
    """

    threshold: float | str = "auto"
    min_area: int = 10
    connectivity: int = 8

    def __post_init__(self):
        if self.min_area < 1:
            raise ParameterError("min_area must be >= 1")
        if self.connectivity not in (4, 8):
            raise ParameterError("connectivity must be 4 or 8")
        if isinstance(self.threshold, str):
            if self.threshold != "auto":
                raise ParameterError(f"threshold must be a number or 'auto', got {self.threshold!r}")
        elif not 0 <= self.threshold <= 255:
            raise ParameterError("threshold must lie in [0, 255]")


def auto_threshold(pixels: np.ndarray) -> float:
    from skimage.filters import threshold_otsu

    p = pixels.astype(np.float64)
    if p.min() == p.max():
        return float(p.min())
    med = float(np.median(p))
    spread = 1.4826 * float(np.median(np.abs(p - med)))
    return max(float(threshold_otsu(p)), med + 3.0 * max(spread, 8.0))


def blob_count(window: GrayImage, config: BlobCounterConfig = BlobCounterConfig()) -> float:
    """Number of components of ``{pixel > threshold}`` with at least ``min_area`` pixels."""
    thr = auto_threshold(window.pixels) if config.threshold == "auto" else config.threshold
    structure = np.ones((3, 3)) if config.connectivity == 8 else None
    labels, n = ndimage.label(window.pixels > thr, structure=structure)
    if n == 0:
        return 0.0
    sizes = np.bincount(labels.ravel())[1:]
    return float(np.count_nonzero(sizes >= config.min_area))


class BlobCounter:
    def __init__(self, config: BlobCounterConfig = BlobCounterConfig()):
        self.config = config

    def count(self, window: GrayImage) -> float:
        return blob_count(window, self.config)


class ZeroCounter:
    def count(self, window: GrayImage) -> float:
        return 0.0


class MaskOracleCounter:
    """Reads the ground truth: counts centers in the matching mask window."""

    uses_mask = True

    def count(self, window: GrayImage, mask: CenterMask | None = None) -> float:
        if mask is None:
            raise DataError("oracle counter needs the ground-truth mask")
        return float(mask.count)


class ExternalCommandCounter:
    """Runs ``argv + [png_path]`` per window and parses a decimal count from stdout."""

    def __init__(self, argv: Sequence[str], timeout: float | None = 60.0):
        self.argv = list(argv)
        self.timeout = timeout

    def count(self, window: GrayImage) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "window.png"
            write_png(path, window)
            try:
                proc = subprocess.run(self.argv + [str(path)], capture_output=True, text=True,
                                      timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendError(f"counter command failed: {exc}") from exc
        if proc.returncode != 0:
            raise BackendError(f"counter command exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        tokens = proc.stdout.split()
        try:
            value = float(tokens[-1])
        except (IndexError, ValueError):
            raise BackendError(f"counter command printed no number: {proc.stdout[:200]!r}") from None
        if not math.isfinite(value):
            raise BackendError("counter command returned a non-finite count")
        return value


def predict_count(image: GrayImage, counter, window: tuple[int, int],
                  policy: str = "drop_partial", mask: CenterMask | None = None) -> float:
    """Sum of window-level predictions over the non-overlapping tiling."""
    h, w = window
    total = 0.0
    uses_mask = getattr(counter, "uses_mask", False)
    for y, x in tile_origins(image.shape, window, policy):
        win = GrayImage(_cut(image.pixels, y, x, h, w))
        if uses_mask:
            m = None if mask is None else CenterMask(_cut(mask.pixels, y, x, h, w))
            total += counter.count(win, m)
        else:
            total += counter.count(win)
    return total


# --------------------------------------------------------------------- metrics

def _pair(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).ravel()
    g = np.asarray(gts, dtype=np.float64).ravel()
    if p.size != g.size:
        raise ParameterError(f"length mismatch: {p.size} predictions vs {g.size} targets")
    if p.size == 0:
        raise ParameterError("need at least one prediction")
    return p, g


def mae(preds, gts) -> float:
    p, g = _pair(preds, gts)
    return float(np.mean(np.abs(p - g)))


def rmse(preds, gts) -> float:
    p, g = _pair(preds, gts)
    return float(np.sqrt(np.mean((p - g) ** 2)))


# ---------------------------------------------------------------------- splits

def bin_index(count: float, edges: Sequence[float]) -> int | None:
    """Index ``i`` with ``edges[i] <= count < edges[i + 1]``, or None."""
    for i in range(len(edges) - 1):
        if edges[i] <= count < edges[i + 1]:
            return i
    return None


def stratified_split(records: Manifest, bin_edges: Sequence[float], per_bin: int,
                     train_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Draw ``per_bin`` records from each count bin, then split each draw.

    ``floor(per_bin * train_fraction)`` of every bin's draw goes to train and
    the rest to validation. Records outside all bins are ignored.
    """
    if len(bin_edges) < 2 or any(b <= a for a, b in zip(bin_edges, bin_edges[1:])):
        raise ParameterError("bin edges must be strictly increasing with at least two entries")
    if per_bin < 1:
        raise ParameterError("per_bin must be >= 1")
    if not 0.0 <= train_fraction <= 1.0:
        raise ParameterError("train_fraction must lie in [0, 1]")
    n_bins = len(bin_edges) - 1
    members: list[list[int]] = [[] for _ in range(n_bins)]
    for i, rec in enumerate(records):
        b = bin_index(rec.cell_count, bin_edges)
        if b is not None:
            members[b].append(i)
    for b, idx in enumerate(members):
        if len(idx) < per_bin:
            raise DataError(f"bin [{bin_edges[b]}, {bin_edges[b + 1]}) holds {len(idx)} records, "
                            f"needs {per_bin}")
    g = rng(seed)
    n_train = int(math.floor(per_bin * train_fraction))
    train, val = [], []
    for idx in members:
        pick = g.choice(np.asarray(idx), size=per_bin, replace=False)
        train.extend(records[int(i)] for i in pick[:n_train])
        val.extend(records[int(i)] for i in pick[n_train:])
    return Manifest(train, records.root), Manifest(val, records.root)


# ------------------------------------------------------------------ evaluation

@dataclass
class EvalReport:
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    mae: float = 0.0
    rmse: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_image": [
                {"id": i, "prediction": p, "prediction_rounded": int(round(p)), "ground_truth": g}
                for i, p, g in self.per_image
            ],
            "mae": self.mae,
            "rmse": self.rmse,
            "n": len(self.per_image),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        rows = ["| image | prediction | rounded | ground truth |", "|---|---:|---:|---:|"]
        for i, p, g in self.per_image:
            rows.append(f"| {i} | {p:.3f} | {int(round(p))} | {g:g} |")
        rows.append("")
        rows.append(f"MAE {self.mae:.4f} | RMSE {self.rmse:.4f} | n = {len(self.per_image)}")
        return "\n".join(rows) + "\n"


def evaluate(manifest: Manifest, counter, window: tuple[int, int],
             policy: str = "drop_partial", jobs: int = 1) -> EvalReport:
    """Predict every record of ``manifest`` and aggregate MAE/RMSE in manifest order."""
    missing = [rec.image_path for rec in manifest if not manifest.resolve(rec.image_path).is_file()]
    if getattr(counter, "uses_mask", False):
        missing += [str(rec.mask_path) for rec in manifest
                    if rec.mask_path is None or not manifest.resolve(rec.mask_path).is_file()]
    if missing:
        raise FileNotFoundError(f"missing files: {', '.join(missing)}")
    if len(manifest) == 0:
        raise DataError("cannot evaluate an empty manifest")

    def one(i: int) -> float:
        img = manifest.load_image(i)
        mask = manifest.load_mask(i) if getattr(counter, "uses_mask", False) else None
        return predict_count(img, counter, window, policy, mask)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            preds = list(ex.map(one, range(len(manifest))))
    else:
        preds = [one(i) for i in range(len(manifest))]
    gts = [float(rec.cell_count) for rec in manifest]
    report = EvalReport(
        per_image=[(rec.image_path, p, g) for rec, p, g in zip(manifest, preds, gts)],
        mae=mae(preds, gts),
        rmse=rmse(preds, gts),
    )
    return report
