import numpy as np
import pytest

from cellsim.imaging import CenterMask, GrayImage, Manifest, ManifestRecord, write_manifest, write_png

# acceptance outcomes, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, label = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}: {label}")


def disc_image(shape, centers, radius=4, value=200, background=10):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    img = np.full(shape, background, dtype=np.uint8)
    for cy, cx in centers:
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius] = value
    return GrayImage(img)


def make_dataset(root, items):
    """Write ``(image, mask)`` pairs to ``root`` and return the manifest path."""
    records = []
    for i, (img, mask) in enumerate(items):
        write_png(root / "images" / f"{i:03d}.png", img)
        write_png(root / "masks" / f"{i:03d}.png", mask)
        records.append(ManifestRecord(f"images/{i:03d}.png", mask.count, i, f"masks/{i:03d}.png"))
    path = root / "manifest.jsonl"
    write_manifest(path, Manifest(records, root))
    return path


@pytest.fixture
def disc_dataset(tmp_path):
    g = np.random.default_rng(5)
    items = []
    for k in range(4):
        pts = [(int(y), int(x)) for y, x in zip(g.integers(8, 56, 2 + k), g.integers(8, 56, 2 + k))]
        pts = list(dict.fromkeys(pts))
        items.append((disc_image((64, 64), pts, radius=1), CenterMask.from_points((64, 64), pts)))
    return make_dataset(tmp_path, items)
