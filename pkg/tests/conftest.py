"""Shared synthetic scenes and small configurations for the test suite.

The synthetic light fields are built from sums of random-phase sinusoids,
so sub-aperture views at any disparity are exact analytic translations of
one another (no interpolation error in the ground truth).
"""
import numpy as np
import pytest

from lumos.lfdata import LightField
from lumos.optics import OpticalConfig


def sinusoid_views(n_grid: int, size: int, disparity: float, seed: int,
                   periods=(16.0, 26.0, 40.0), lo=0.05, hi=0.95) -> np.ndarray:
    """(N, N, H, W, 3) views of a fronto-parallel textured plane.

    View (s, t) shows the texture translated by ((s-c) d, (t-c) d) pixels,
    c the grid center, evaluated analytically.
    """
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(float)
    c = (n_grid - 1) / 2
    views = np.zeros((n_grid, n_grid, size, size, 3))
    comps = [(ch, p, rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi),
              rng.uniform(0.5, 1.0))
             for ch in range(3) for p in periods]
    for s in range(n_grid):
        for t in range(n_grid):
            dy, dx = (s - c) * disparity, (t - c) * disparity
            for ch, p, th, ph, amp in comps:
                views[s, t, :, :, ch] += amp * np.sin(
                    2 * np.pi * (np.cos(th) * (x - dx) + np.sin(th) * (y - dy)) / p + ph)
    vmin, vmax = views.min(), views.max()
    return lo + (hi - lo) * (views - vmin) / (vmax - vmin)


def plane_field(n_grid: int, size: int, disparity: float, seed: int, **kw) -> LightField:
    return LightField(views=sinusoid_views(n_grid, size, disparity, seed, **kw))


def two_plane_field(n_grid: int, size: int, d_bg: float, d_fg: float, seed: int) -> LightField:
    """Background plane plus an occluding foreground square at a different
    disparity; integer disparities keep the compositing exact."""
    bgv = sinusoid_views(n_grid, size, d_bg, seed)
    fgv = sinusoid_views(n_grid, size, d_fg, seed + 1)
    c = (n_grid - 1) / 2
    views = bgv.copy()
    q = size // 4
    mask0 = np.zeros((size, size), bool)
    mask0[q:3 * q, q:3 * q] = True
    for s in range(n_grid):
        for t in range(n_grid):
            dy = int(round((s - c) * d_fg))
            dx = int(round((t - c) * d_fg))
            m = np.zeros_like(mask0)
            ys0, ys1 = max(0, dy), min(size, size + dy)
            xs0, xs1 = max(0, dx), min(size, size + dx)
            m[ys0:ys1, xs0:xs1] = mask0[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
            views[s, t][m] = fgv[s, t][m]
    return LightField(views=views)


@pytest.fixture(scope="session")
def toy_cfg() -> OpticalConfig:
    """Small grid for fast tests: 9-cell apertures, 6 samples per cell."""
    return OpticalConfig(pupil_grid_size=64, aperture_samples=54, aperture_resolution=9)


@pytest.fixture(scope="session")
def tiny_cfg() -> OpticalConfig:
    """Minimal grid used by gradient checks: l=3 on a 16-point grid."""
    return OpticalConfig(pupil_grid_size=16, aperture_samples=12, aperture_resolution=3)
