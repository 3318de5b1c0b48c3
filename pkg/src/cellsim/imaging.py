"""Image and latent containers, pixel/real conversion, PNG and manifest I/O.

Images are 8-bit grayscale planes stored row-major as ``(height, width)``
``uint8`` arrays. Center masks use the same layout with 255 at every cell
center and 0 elsewhere, so the cell count of a mask is its number of 255
pixels. Latents are plain ``float64`` arrays of shape ``(C, H', W')``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import DataError, FormatError, ShapeError

# A latent tensor is just an ndarray; see ``as_tensor3`` for the contract.
Tensor3 = np.ndarray


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 8-bit grayscale image."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ShapeError(f"image must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer) or arr.size and (arr.min() < 0 or arr.max() > 255):
                raise FormatError("image values must be integers in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def data(self) -> bytes:
        """Row-major intensities."""
        return self.pixels.tobytes()

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CenterMask(GrayImage):
    """Binary cell-center ground truth (values 0 or 255)."""

    def __post_init__(self):
        super().__post_init__()
        vals = self.pixels
        if np.any((vals != 0) & (vals != 255)):
            raise FormatError("center mask values must be 0 or 255")

    @classmethod
    def from_points(cls, shape: tuple[int, int], points: Iterable[tuple[int, int]]) -> "CenterMask":
        arr = np.zeros(shape, dtype=np.uint8)
        for y, x in points:
            arr[y, x] = 255
        return cls(arr)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.pixels == 255))

    def centers(self) -> np.ndarray:
        """``(k, 2)`` array of ``(y, x)`` center coordinates in row-major order."""
        return np.argwhere(self.pixels == 255)


def as_tensor3(z) -> Tensor3:
    """Validate and return ``z`` as a finite float64 ``(C, H, W)`` array."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 3 or 0 in arr.shape:
        raise ShapeError(f"expected a non-empty (C, H, W) tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("tensor contains non-finite values")
    return arr


def to_real(img: GrayImage) -> Tensor3:
    """Map pixels to ``[0, 1]`` as a single-channel tensor."""
    return img.pixels.astype(np.float64)[None, :, :] / 255.0


def from_real(t: Tensor3) -> GrayImage:
    """Clamp to ``[0, 1]`` and quantize to the nearest 8-bit level."""
    t = as_tensor3(t)
    if t.shape[0] != 1:
        raise ShapeError(f"from_real needs a single-channel tensor, got {t.shape[0]} channels")
    # floor(x + 0.5) rounds half up, so 0.5 -> 128 rather than banker's 127/128 ambiguity
    q = np.floor(np.clip(t[0], 0.0, 1.0) * 255.0 + 0.5)
    return GrayImage(q.astype(np.uint8))


# --------------------------------------------------------------------------- PNG

def read_png(path: str | os.PathLike) -> GrayImage:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: not a PNG file")
        if im.mode != "L":
            raise FormatError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.uint8)
    return GrayImage(arr)


def read_mask(path: str | os.PathLike) -> CenterMask:
    return CenterMask(read_png(path).pixels)


def write_png(path: str | os.PathLike, img: GrayImage) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img.pixels), mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------- manifests

@dataclass
class ManifestRecord:
    image_path: str
    cell_count: int
    seed: int = 0
    mask_path: str | None = None
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if int(self.cell_count) != self.cell_count or self.cell_count < 0:
            raise DataError(f"cell_count must be a non-negative integer, got {self.cell_count!r}")
        self.cell_count = int(self.cell_count)
        if not 0 <= int(self.seed) < 2**64:
            raise DataError(f"seed out of 64-bit unsigned range: {self.seed!r}")
        self.seed = int(self.seed)

    def to_json(self) -> str:
        doc = {
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "cell_count": self.cell_count,
            "seed": self.seed,
            "tags": list(self.tags),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        doc = json.loads(line)
        try:
            return cls(
                image_path=doc["image_path"],
                mask_path=doc.get("mask_path"),
                cell_count=doc["cell_count"],
                seed=doc.get("seed", 0),
                tags=list(doc.get("tags", [])),
            )
        except KeyError as exc:
            raise DataError(f"manifest record missing field {exc}") from None


class Manifest(Sequence[ManifestRecord]):
    """Ordered records plus the directory their relative paths resolve against."""

    def __init__(self, records: Iterable[ManifestRecord] = (), root: str | os.PathLike = "."):
        self.records = list(records)
        self.root = Path(root)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Manifest(self.records[i], self.root)
        return self.records[i]

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def load_image(self, i: int) -> GrayImage:
        return read_png(self.resolve(self.records[i].image_path))

    def load_mask(self, i: int) -> CenterMask:
        rec = self.records[i]
        if rec.mask_path is None:
            raise DataError(f"record {rec.image_path} has no mask")
        return read_mask(self.resolve(rec.mask_path))

    def rebased(self, root: str | os.PathLike) -> "Manifest":
        """Same records with paths rewritten relative to ``root``."""
        root = Path(root)
        out = []
        for rec in self.records:
            img = os.path.relpath(self.resolve(rec.image_path), root)
            mask = None if rec.mask_path is None else os.path.relpath(self.resolve(rec.mask_path), root)
            out.append(ManifestRecord(img, rec.cell_count, rec.seed, mask, list(rec.tags)))
        return Manifest(out, root)


def read_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        records = [ManifestRecord.from_json(line) for line in fh if line.strip()]
    return Manifest(records, path.parent)


def write_manifest(path: str | os.PathLike, manifest: Manifest, check_masks: bool = True) -> None:
    """Write JSONL, re-basing paths onto the manifest file's directory.

    With ``check_masks`` every record that names a mask is verified against
    the mask's pixel count before anything is written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rebased = manifest.rebased(path.parent)
    if check_masks:
        for i, rec in enumerate(rebased):
            if rec.mask_path is not None:
                n = rebased.load_mask(i).count
                if n != rec.cell_count:
                    raise DataError(
                        f"{rec.mask_path}: mask holds {n} centers but record says {rec.cell_count}"
                    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in rebased:
            fh.write(rec.to_json() + "\n")
