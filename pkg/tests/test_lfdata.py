"""Dataset handling: loading, round trips, view sampling, splits."""
import os

import numpy as np
import pytest

from lumos import lfdata
from lumos.errors import (
    BadCount,
    BadRange,
    InfeasiblePattern,
    MissingView,
    NotSquareGrid,
    ShapeMismatch,
)
from lumos.lfdata import LightField, load_light_field, sample_views, save_light_field, split_dataset

from conftest import plane_field


def _write_scene(path, n, size=16, seed=0, bit_depth=16):
    rng = np.random.default_rng(seed)
    views = np.clip(rng.random((n, n, size, size, 3)), 0, 1)
    lf = LightField(views=views)
    save_light_field(lf, str(path), bit_depth=bit_depth)
    return lf


def test_load_9x9(tmp_path):
    _write_scene(tmp_path, 9, size=8)
    lf = load_light_field(str(tmp_path))
    assert lf.angular_resolution == 9
    assert lf.spatial_resolution == (8, 8)


def test_load_7x7(tmp_path):
    # the Lytro-style 7x7 layout: 49 files
    _write_scene(tmp_path, 7, size=8)
    lf = load_light_field(str(tmp_path))
    assert lf.angular_resolution == 7


def test_missing_view_one_of_81(tmp_path):
    # 80 of 81 files: the implied 9x9 grid has a hole
    _write_scene(tmp_path, 9, size=8)
    os.remove(tmp_path / "view_3_5.png")
    with pytest.raises(MissingView):
        load_light_field(str(tmp_path))


def test_missing_view_square_count_with_holes(tmp_path):
    # exactly 64 files left but indices still span 0..8
    _write_scene(tmp_path, 9, size=8)
    remaining = sorted(f for f in os.listdir(tmp_path) if f != "view_8_8.png")
    for f in remaining[:17]:
        os.remove(tmp_path / f)
    with pytest.raises(MissingView):
        load_light_field(str(tmp_path))


def test_not_square_grid(tmp_path):
    # a complete 2x3 rectangular grid is recognized as non-square
    import cv2

    for s in range(2):
        for t in range(3):
            cv2.imwrite(str(tmp_path / f"view_{s}_{t}.png"),
                        np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(NotSquareGrid):
        load_light_field(str(tmp_path))


def test_shape_mismatch(tmp_path):
    import cv2

    _write_scene(tmp_path, 3, size=8)
    cv2.imwrite(str(tmp_path / "view_1_1.png"), np.zeros((12, 12, 3), dtype=np.uint8))
    with pytest.raises(ShapeMismatch):
        load_light_field(str(tmp_path))


@pytest.mark.parametrize("bit_depth,tol", [(8, 1 / 255), (16, 1 / 65535)])
def test_round_trip_within_quantization(tmp_path, bit_depth, tol):
    lf = _write_scene(tmp_path, 3, size=12, seed=4, bit_depth=bit_depth)
    back = load_light_field(str(tmp_path))
    assert np.abs(back.views - lf.views).max() <= tol * 0.5 + 1e-12


def test_load_is_order_independent(tmp_path):
    # loading places views by parsed indices, so a second enumeration of
    # the same files gives an identical grid
    _write_scene(tmp_path, 3, size=8, seed=1)
    a = load_light_field(str(tmp_path))
    b = load_light_field(str(tmp_path))
    assert np.array_equal(a.views, b.views)


def test_lightfield_invariants():
    with pytest.raises(ShapeMismatch):
        LightField(views=np.zeros((1, 1, 4, 4, 3)))  # N < 2
    with pytest.raises(BadRange):
        LightField(views=np.full((2, 2, 4, 4, 3), 1.5))  # out of range


# ---------------------------------------------------------------------------
# view sampling
# ---------------------------------------------------------------------------

def test_corners4_on_9():
    sel = sample_views(9, "corners4")
    assert set(sel.indices) == {(0, 0), (0, 8), (8, 0), (8, 8)}
    assert sel.n == 4


def test_grid3x3_on_9():
    sel = sample_views(9, "grid3x3")
    assert set(sel.indices) == {(s, t) for s in (0, 4, 8) for t in (0, 4, 8)}
    assert sel.n == 9


def test_grid3x3_infeasible_on_2():
    with pytest.raises(InfeasiblePattern):
        sample_views(2, "grid3x3")


def test_grid3x3_infeasible_on_even():
    with pytest.raises(InfeasiblePattern):
        sample_views(4, "grid3x3")


def test_custom_validated():
    sel = sample_views(5, "custom", custom=[(0, 0), (2, 2), (4, 4)])
    assert sel.n == 3
    with pytest.raises(InfeasiblePattern):
        sample_views(5, "custom", custom=[(0, 0), (0, 0)])
    with pytest.raises(InfeasiblePattern):
        sample_views(5, "custom", custom=[(0, 5)])


def test_selection_always_subset():
    for n in (3, 5, 7, 9):
        for pattern in ("corners4", "grid3x3"):
            sel = sample_views(n, pattern)
            assert len(set(sel.indices)) == sel.n
            assert all(0 <= s < n and 0 <= t < n for s, t in sel.indices)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def test_split_31_8():
    scenes = [f"scene{i:02d}" for i in range(39)]
    split = split_dataset(scenes, 31, seed=7)
    assert len(split.train_scenes) == 31 and len(split.test_scenes) == 8
    assert not set(split.train_scenes) & set(split.test_scenes)


def test_split_51_12():
    scenes = [f"s{i}" for i in range(63)]
    split = split_dataset(scenes, 51, seed=7)
    assert len(split.train_scenes) == 51 and len(split.test_scenes) == 12


def test_split_deterministic():
    scenes = [f"x{i}" for i in range(20)]
    a = split_dataset(scenes, 15, seed=3)
    b = split_dataset(list(reversed(scenes)), 15, seed=3)
    assert a == b


def test_split_bad_count():
    with pytest.raises(BadCount):
        split_dataset(["a", "b"], 2, seed=0)


# ---------------------------------------------------------------------------
# focal stack export
# ---------------------------------------------------------------------------

def test_save_focal_stack(tmp_path):
    lf = plane_field(3, 16, 0.0, seed=2)
    slices = [lf.view(1, 1), lf.view(0, 0) * 0.5]
    lfdata.save_focal_stack(str(tmp_path / "out"), slices, [-0.5, 0.5],
                            extra_meta={"config_hash": "abc"})
    files = sorted(os.listdir(tmp_path / "out"))
    assert files == ["stack_0.png", "stack_1.png", "stack_meta.txt"]
    meta = (tmp_path / "out" / "stack_meta.txt").read_text()
    assert "psi=-0.5" in meta and "config_hash=abc" in meta
