"""Focus measure, weight maps, loss degeneracy, PSNR and SSIM oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumos import metrics
from lumos.errors import ImageTooSmall, NonNegativeBetaRequired, ShapeMismatch


# ---------------------------------------------------------------------------
# focus measure
# ---------------------------------------------------------------------------

def test_focus_measure_constant_is_zero():
    assert metrics.focus_measure(np.full((8, 8, 3), 0.3)).max() == 0.0


def test_focus_measure_step_edge():
    # a vertical step of height h in one channel puts U = h on the column
    # left of the edge and 0 elsewhere (forward differences)
    img = np.zeros((6, 6, 3))
    img[:, 3:, 1] = 0.25
    u = metrics.focus_measure(img)
    expected = np.zeros((6, 6))
    expected[:, 2] = 0.25
    assert np.array_equal(u, expected)


def test_focus_measure_checkerboard():
    # 0/1 checkerboard in all channels: enumerate forward differences by
    # hand -> |gx| = |gy| = 1 per channel in the interior, so U = 6
    y, x = np.mgrid[0:8, 0:8]
    board = ((y + x) % 2).astype(float)
    img = np.stack([board] * 3, axis=2)
    u = metrics.focus_measure(img)
    assert np.array_equal(u[:-1, :-1], np.full((7, 7), 6.0))


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_focus_measure_nonnegative_and_zero_iff_constant(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((6, 7, 3))
    u = metrics.focus_measure(img)
    assert u.min() >= 0.0
    assert (u.max() == 0.0) == bool(np.all(img == img[0, 0]))


# ---------------------------------------------------------------------------
# weight maps
# ---------------------------------------------------------------------------

def test_weight_maps_beta_zero_all_ones():
    rng = np.random.default_rng(0)
    slices = [rng.random((8, 8, 3)) for _ in range(3)]
    w = metrics.weight_maps(slices, beta=0.0)
    assert np.array_equal(w.maps, np.ones((3, 8, 8)))


def test_weight_maps_constant_slice_degenerate():
    w = metrics.weight_maps([np.full((6, 6, 3), 0.5)], beta=3.0)
    assert np.array_equal(w.maps, np.ones((1, 6, 6)))


def test_weight_maps_extremes():
    # pixels at normalized focus 0 and 1 weigh 1 and e^2
    img = np.zeros((4, 4, 3))
    img[:, 2:, 0] = 1.0
    w = metrics.weight_maps([img], beta=2.0)
    assert w.maps.min() == pytest.approx(1.0)
    assert w.maps.max() == pytest.approx(np.e ** 2)


def test_weight_maps_range_and_monotone_in_beta():
    rng = np.random.default_rng(1)
    slices = [rng.random((8, 8, 3)) for _ in range(2)]
    prev = metrics.weight_maps(slices, beta=0.0).maps
    for beta in (0.5, 1.0, 2.0, 5.0):
        cur = metrics.weight_maps(slices, beta=beta).maps
        assert cur.min() >= 1.0 and cur.max() <= np.exp(beta) + 1e-12
        assert np.all(cur >= prev - 1e-15)
        prev = cur


def test_weight_maps_negative_beta_rejected():
    with pytest.raises(NonNegativeBetaRequired):
        metrics.weight_maps([np.zeros((4, 4, 3))], beta=-1.0)


# ---------------------------------------------------------------------------
# weighted L1
# ---------------------------------------------------------------------------

def test_weighted_l1_identical_stacks_zero():
    rng = np.random.default_rng(2)
    stack = [rng.random((8, 8, 3)) for _ in range(2)]
    w = metrics.weight_maps(stack, beta=2.0)
    assert metrics.weighted_l1(stack, [s.copy() for s in stack], w) == 0.0


def test_weighted_l1_beta_zero_is_plain_l1_bitwise():
    rng = np.random.default_rng(3)
    gen = [rng.random((9, 7, 3)) for _ in range(3)]
    gt = [rng.random((9, 7, 3)) for _ in range(3)]
    w0 = metrics.weight_maps(gt, beta=0.0)
    got = metrics.weighted_l1(gen, gt, w0, border=1)

    # plain mean absolute error over the same crops, computed independently
    total, count = 0.0, 0
    for a, b in zip(gen, gt):
        diff = np.abs(a - b)[1:-1, 1:-1]
        total += float((np.ones((7, 5))[:, :, None] * diff).sum())
        count += diff.size
    assert got == total / count  # bit-for-bit


def test_weighted_l1_hand_value():
    # 2x2 single-slice toy: |diff| = [[0,1],[1,0]], weights [[1,e^2],[1,1]]
    gen = [np.zeros((2, 2, 1))]
    gt = [np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]]
    w = metrics.WeightMaps(maps=np.array([[[1.0, np.e ** 2], [1.0, 1.0]]]), beta=2.0)
    got = metrics.weighted_l1(gen, gt, w)
    assert got == pytest.approx((0 + np.e ** 2 + 1 + 0) / 4)


def test_weighted_l1_shape_mismatch():
    w = metrics.WeightMaps(maps=np.ones((1, 4, 4)), beta=0.0)
    with pytest.raises(ShapeMismatch):
        metrics.weighted_l1([np.zeros((4, 4, 3))], [np.zeros((5, 5, 3))], w)


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def test_psnr_identical_is_cap():
    img = np.random.default_rng(4).random((8, 8, 3))
    assert metrics.psnr(img, img.copy()) == 100.0


def test_psnr_uniform_difference():
    a = np.zeros((16, 16))
    b = np.full((16, 16), 0.1)
    assert metrics.psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_reference_formula():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.random((12, 12, 3))
        b = rng.random((12, 12, 3))
        ref = 10.0 * np.log10(1.0 / np.mean((a - b) ** 2))
        assert abs(metrics.psnr(a, b) - ref) <= 1e-9


def test_psnr_symmetric():
    rng = np.random.default_rng(6)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert metrics.psnr(a, b) == metrics.psnr(b, a)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def test_ssim_identical_is_one():
    img = np.random.default_rng(7).random((16, 16, 3))
    assert metrics.ssim(img, img.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_closed_form():
    # constants 0 vs 1: means 0 and 1, zero variances, so SSIM reduces to
    # (C1 * C2) / ((0 + 1 + C1) * C2) = C1 / (1 + C1)
    a = np.zeros((16, 16))
    b = np.ones((16, 16))
    c1 = 0.01 ** 2
    assert metrics.ssim(a, b) == pytest.approx(c1 / (1 + c1), rel=1e-12)


def test_ssim_matches_reference_implementation():
    skimage = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(8)
    for _ in range(10):
        a = rng.random((24, 24))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = skimage.structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0)
        assert abs(metrics.ssim(a, b) - ref) <= 1e-4


def test_ssim_symmetric():
    rng = np.random.default_rng(9)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-15)


def test_ssim_too_small():
    with pytest.raises(ImageTooSmall):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))
