"""Focus-weighted reconstruction loss and image quality metrics.

The training loss is a weighted L1 distance between the displayed and the
ground-truth focal stacks. Weight maps are derived from a per-pixel focus
measure of the ground-truth slices (gradient magnitude sum), normalized to
[0, 1] per slice and exponentiated, so in-focus regions can be emphasized.
Weights are constants: no gradient flows through them, which avoids the
degenerate incentive to blur the generated stack to shrink its own
weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall, NonNegativeBetaRequired, ShapeMismatch

PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class WeightMaps:
    """Per-slice reconstruction weights, each entry in [1, e^beta]."""

    maps: np.ndarray  # (m, H, W)
    beta: float


def focus_measure(image: np.ndarray) -> np.ndarray:
    """Per-pixel focus level: channel sum of |forward differences|.

    The trailing row/column gradient is defined as zero, so a constant
    image measures exactly zero everywhere.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    gx = np.zeros(img.shape)
    gy = np.zeros(img.shape)
    gx[:, :-1, :] = img[:, 1:, :] - img[:, :-1, :]
    gy[:-1, :, :] = img[1:, :, :] - img[:-1, :, :]
    return (np.abs(gx) + np.abs(gy)).sum(axis=2)


def weight_maps(gt_slices: list[np.ndarray] | np.ndarray, beta: float) -> WeightMaps:
    """exp(beta * normalized focus measure) per ground-truth slice.

    Normalization is (U - min U) / (max U - min U) over all pixels of the
    slice; a constant slice (max == min) normalizes to zero, giving an
    all-ones map. beta = 0 gives all-ones maps exactly.
    """
    if beta < 0:
        raise NonNegativeBetaRequired(f"beta must be >= 0, got {beta}")
    maps = []
    for sl in gt_slices:
        u = focus_measure(sl)
        lo, hi = u.min(), u.max()
        ubar = np.zeros_like(u) if hi == lo else (u - lo) / (hi - lo)
        maps.append(np.exp(beta * ubar))
    return WeightMaps(maps=np.stack(maps), beta=beta)


def _border_crop(arr: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return arr
    h, w = arr.shape[0], arr.shape[1]
    if 2 * border >= h or 2 * border >= w:
        raise ShapeMismatch(f"border {border} leaves no pixels of a {h}x{w} image")
    return arr[border:h - border, border:w - border]


def weighted_l1(generated: list[np.ndarray], ground_truth: list[np.ndarray],
                weights: WeightMaps, border: int = 0) -> float:
    """Mean over slices, border-excluded pixels, and channels of
    W_j * |generated_j - gt_j| (weight maps broadcast across channels)."""
    if len(generated) != len(ground_truth) or len(generated) != weights.maps.shape[0]:
        raise ShapeMismatch("slice count mismatch between stacks and weights")
    total = 0.0
    count = 0
    for gen, gt, w in zip(generated, ground_truth, weights.maps):
        if gen.shape != gt.shape:
            raise ShapeMismatch(f"slice shapes differ: {gen.shape} vs {gt.shape}")
        diff = _border_crop(np.abs(gen - gt), border)
        win = _border_crop(w, border)
        total += float((win[:, :, None] * diff).sum())
        count += diff.size
    return total / count


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) against a unit peak, capped at 100 dB.

    Inputs are expected clamped to [0, 1] and border-excluded by the
    caller; identical inputs report the cap.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_filter(img: np.ndarray, g1d: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1-D window."""
    k = g1d.size
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=0)
    tmp = win @ g1d
    win = np.lib.stride_tricks.sliding_window_view(tmp, k, axis=1)
    return win @ g1d


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM with the standard constants.

    11 x 11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic
    range 1, averaged over positions where the full window fits. Color
    images are converted to grayscale by the channel mean.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ImageTooSmall(f"need at least 11x11 pixels, got {a.shape}")
    g = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mu_a = _valid_filter(a, g)
    mu_b = _valid_filter(b, g)
    e_aa = _valid_filter(a * a, g)
    e_bb = _valid_filter(b * b, g)
    e_ab = _valid_filter(a * b, g)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())
