import sys
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsim.errors import BackendError, DataError, ParameterError
from cellsim.evaluation import (
    BlobCounter,
    BlobCounterConfig,
    ExternalCommandCounter,
    MaskOracleCounter,
    ZeroCounter,
    blob_count,
    evaluate,
    mae,
    predict_count,
    rmse,
    stratified_split,
    tile,
    tile_origins,
)
from cellsim.imaging import GrayImage, Manifest, ManifestRecord, read_manifest
from cellsim.synthgen import GenConfig, generate

from conftest import disc_image


class OneCounter:
    def count(self, window):
        return 1.0


def flood_fill_count(binary, min_area, eight=True):
    """Reference component count by breadth-first search."""
    H, W = binary.shape
    seen = np.zeros_like(binary, bool)
    nbrs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy or dx) and (eight or not (dy and dx))]
    n = 0
    for y in range(H):
        for x in range(W):
            if binary[y, x] and not seen[y, x]:
                size, q = 0, deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    size += 1
                    for dy, dx in nbrs:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < H and 0 <= nx < W and binary[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                n += size >= min_area
    return n


# ------------------------------------------------------------------ tiling

def test_tile_counts():
    img = GrayImage(np.zeros((600, 800), np.uint8))
    assert len(tile(img, (200, 200))) == 12
    assert len(tile(img, (64, 64), "drop_partial")) == 108
    assert len(tile(img, (64, 64), "pad_zero")) == 10 * 13


def test_window_equal_to_image():
    img = GrayImage(np.arange(12, dtype=np.uint8).reshape(3, 4))
    (only,) = tile(img, (3, 4))
    assert only == img


def test_oversized_window_warns(caplog):
    assert tile_origins((10, 10), (20, 20)) == []
    assert "no tiles" in caplog.text


def test_pad_zero_pads_with_zeros():
    img = GrayImage(np.full((5, 5), 7, np.uint8))
    tiles = tile(img, (4, 4), "pad_zero")
    assert len(tiles) == 4
    assert tiles[-1].pixels[0, 0] == 7 and tiles[-1].pixels[1:, :].max() == 0


def test_bad_policy_and_window():
    with pytest.raises(ParameterError):
        tile_origins((10, 10), (5, 5), "wrap")
    with pytest.raises(ParameterError):
        tile_origins((10, 10), (0, 5))


@given(st.integers(1, 90), st.integers(1, 90), st.integers(1, 30), st.integers(1, 30))
def test_tiles_cover_without_overlap(H, W, h, w):
    cover = np.zeros((H, W), int)
    for y, x in tile_origins((H, W), (h, w), "pad_zero"):
        cover[y:y + h, x:x + w] += 1
    assert cover.min() == 1 and cover.max() == 1
    assert len(tile_origins((H, W), (h, w))) == (H // h) * (W // w)


def test_predict_count_sums_windows():
    img = GrayImage(np.zeros((600, 800), np.uint8))
    assert predict_count(img, ZeroCounter(), (200, 200)) == 0
    assert predict_count(img, OneCounter(), (200, 200)) == 12


def test_predict_count_three_discs():
    img = disc_image((48, 48), [(10, 10), (10, 35), (35, 20)])
    assert predict_count(img, BlobCounter(), (48, 48)) == 3


# ------------------------------------------------------------------- blobs

def test_blob_blank_and_pair():
    assert blob_count(GrayImage(np.zeros((30, 30), np.uint8))) == 0
    assert blob_count(disc_image((30, 40), [(15, 10), (15, 28)])) == 2


def test_blob_config_validation():
    with pytest.raises(ParameterError):
        BlobCounterConfig(threshold="otsu")
    with pytest.raises(ParameterError):
        BlobCounterConfig(connectivity=6)
    with pytest.raises(ParameterError):
        BlobCounterConfig(min_area=0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_blob_count_matches_flood_fill(seed, conn, min_area):
    g = np.random.default_rng(seed)
    px = (g.random((20, 20)) < 0.35).astype(np.uint8) * 200
    cfg = BlobCounterConfig(threshold=100, min_area=min_area, connectivity=conn)
    assert blob_count(GrayImage(px), cfg) == flood_fill_count(px > 100, min_area, conn == 8)


def test_blob_count_is_translation_invariant():
    a = disc_image((40, 40), [(10, 10), (25, 25)])
    b = GrayImage(np.roll(a.pixels, (3, 5), axis=(0, 1)))
    assert blob_count(a) == blob_count(b) == 2


@pytest.mark.parametrize("seed", range(8))
def test_blob_equals_placed_on_separated_cells(seed):
    out = generate(GenConfig(overlap_threshold=0.0, separation_margin=3), seed)
    assert blob_count(out.image) == out.placed_count


# ----------------------------------------------------------------- metrics

def test_metric_hand_cases():
    assert (mae([1, 2], [1, 2]), rmse([1, 2], [1, 2])) == (0.0, 0.0)
    assert mae([1, 4], [2, 2]) == pytest.approx(1.5)
    assert rmse([1, 4], [2, 2]) == pytest.approx(np.sqrt(2.5))
    assert (mae([0], [5]), rmse([0], [5])) == (5.0, 5.0)
    with pytest.raises(ParameterError):
        mae([1], [1, 2])
    with pytest.raises(ParameterError):
        rmse([], [])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=50))
def test_mae_not_above_rmse(pairs):
    p, g = zip(*pairs)
    assert mae(p, g) <= rmse(p, g) * (1 + 1e-12) + 1e-9


# ------------------------------------------------------------------- split

def counts_manifest(counts):
    return Manifest([ManifestRecord(f"{i}.png", c, i) for i, c in enumerate(counts)], ".")


def test_split_one_per_bin_each_side():
    man = counts_manifest([10, 60, 110, 160] * 2)
    train, val = stratified_split(man, [0, 50, 100, 150, 200], 2, 0.5, seed=1)
    for part in (train, val):
        assert sorted(r.cell_count // 50 for r in part) == [0, 1, 2, 3]


def test_split_all_train():
    man = counts_manifest([5, 55])
    train, val = stratified_split(man, [0, 50, 100], 1, 1.0, seed=0)
    assert len(train) == 2 and len(val) == 0


def test_split_errors():
    man = counts_manifest([5, 6, 55])
    with pytest.raises(DataError, match=r"\[50, 100\)"):
        stratified_split(man, [0, 50, 100], 2, 0.5, seed=0)
    with pytest.raises(ParameterError):
        stratified_split(man, [0, 0], 1, 0.5, seed=0)


def test_split_ignores_out_of_range_and_is_disjoint():
    man = counts_manifest(list(range(0, 300, 3)))
    train, val = stratified_split(man, [0, 100, 200], 20, 0.75, seed=3)
    ids = [r.image_path for r in train] + [r.image_path for r in val]
    assert len(ids) == len(set(ids)) == 40
    assert all(r.cell_count < 200 for r in train)


# ---------------------------------------------------------------- evaluate

def test_zero_counter_mae_is_mean_truth(disc_dataset):
    man = read_manifest(disc_dataset)
    rep = evaluate(man, ZeroCounter(), (64, 64))
    assert rep.mae == pytest.approx(np.mean([r.cell_count for r in man]))


def test_oracle_counter_is_perfect(disc_dataset):
    rep = evaluate(read_manifest(disc_dataset), MaskOracleCounter(), (32, 32), "pad_zero")
    assert rep.mae == 0 and rep.rmse == 0
    d = rep.to_dict()
    assert d["n"] == 4 and set(d["per_image"][0]) == {"id", "prediction", "prediction_rounded", "ground_truth"}


def test_missing_files_are_listed(tmp_path):
    man = Manifest([ManifestRecord("a.png", 1), ManifestRecord("b.png", 2)], tmp_path)
    with pytest.raises(FileNotFoundError, match="a.png, b.png"):
        evaluate(man, ZeroCounter(), (8, 8))


@pytest.fixture
def count_script(tmp_path):
    script = tmp_path / "counter.py"
    script.write_text(
        "import sys\n"
        "from PIL import Image\n"
        "import numpy as np\n"
        "a = np.asarray(Image.open(sys.argv[1]))\n"
        "print('count:', float((a == 255).sum()))\n"
    )
    return [sys.executable, str(script)]


def test_external_counter_reads_stdout(count_script, disc_dataset):
    counter = ExternalCommandCounter(count_script)
    img = GrayImage(np.array([[255, 0], [255, 255]], np.uint8))
    assert counter.count(img) == 3.0
    rep = evaluate(read_manifest(disc_dataset), counter, (64, 64), jobs=2)
    assert rep.mae == pytest.approx(np.mean([r.cell_count for r in read_manifest(disc_dataset)]))


def test_external_counter_failures(tmp_path):
    img = GrayImage(np.zeros((2, 2), np.uint8))
    with pytest.raises(BackendError):
        ExternalCommandCounter([sys.executable, "-c", "print('nothing')"]).count(img)
    with pytest.raises(BackendError):
        ExternalCommandCounter([sys.executable, "-c", "import sys; sys.exit(3)"]).count(img)
    with pytest.raises(BackendError):
        ExternalCommandCounter([str(tmp_path / "missing-binary")]).count(img)


def test_report_rendering(disc_dataset):
    rep = evaluate(read_manifest(disc_dataset), ZeroCounter(), (64, 64))
    assert rep.table().splitlines()[-1].startswith("MAE ")
    assert '"mae"' in rep.to_json()
