"""Light field dataset handling: loading, view sampling, splits, export.

On disk a scene is a directory of ``view_{s}_{t}.png`` files forming an
N x N angular grid. Pixels are treated as linear display intensities in
[0, 1]; no gamma transform is applied anywhere, so losses and metrics stay
internally consistent.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    BadCount,
    BadRange,
    InfeasiblePattern,
    MissingView,
    NotSquareGrid,
    ShapeMismatch,
)

_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)\.png$")


@dataclass(frozen=True)
class LightField:
    """Dense N x N grid of RGB sub-aperture views.

    ``views`` has shape (N, N, H, W, 3) with values in [0, 1].
    ``sampling_period`` is the pupil-plane pitch per view step (meters);
    it is metadata and does not affect loading.
    """

    views: np.ndarray
    sampling_period: float = 1e-3

    def __post_init__(self):
        v = self.views
        if v.ndim != 5 or v.shape[0] != v.shape[1] or v.shape[4] != 3:
            raise ShapeMismatch(f"views must be (N, N, H, W, 3), got {v.shape}")
        if v.shape[0] < 2:
            raise ShapeMismatch("angular resolution must be at least 2")
        if v.min() < 0.0 or v.max() > 1.0:
            raise BadRange("view intensities must lie in [0, 1]")
        v.flags.writeable = False  # safe to share across workers

    @property
    def angular_resolution(self) -> int:
        return self.views.shape[0]

    @property
    def spatial_resolution(self) -> tuple[int, int]:
        return self.views.shape[2], self.views.shape[3]

    def view(self, s: int, t: int) -> np.ndarray:
        return self.views[s, t]


@dataclass(frozen=True)
class ViewSelection:
    """A sparse subset of angular coordinates."""

    indices: tuple[tuple[int, int], ...]
    pattern_name: str

    @property
    def n(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class DatasetSplit:
    train_scenes: tuple[str, ...]
    test_scenes: tuple[str, ...]
    seed: int


def _read_png(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise MissingView(f"cannot decode {path}")
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    img = img[:, :, ::-1]  # BGR -> RGB
    peak = 65535.0 if img.dtype == np.uint16 else 255.0
    return img.astype(np.float64) / peak


def load_light_field(path: str, sampling_period: float = 1e-3) -> LightField:
    """Load a scene directory of ``view_{s}_{t}.png`` files.

    The view count must be a perfect square and every grid position must
    be present; 8- or 16-bit samples are mapped to [0, 1] by dividing by
    the bit-depth maximum. File enumeration order never matters: views are
    placed by their parsed (s, t) indices.
    """
    names = [f for f in os.listdir(path) if _VIEW_RE.match(f)]
    if not names:
        raise MissingView(f"no view_{{s}}_{{t}}.png files in {path}")
    found = {}
    for f in names:
        m = _VIEW_RE.match(f)
        found[(int(m.group(1)), int(m.group(2)))] = f
    ns = max(s for s, _ in found) + 1
    nt = max(t for _, t in found) + 1
    if len(found) == ns * nt and ns != nt:
        # a complete rectangular grid that is not square
        raise NotSquareGrid(f"{ns} x {nt} view grid is not square")
    n = max(ns, nt)
    if len(found) != n * n:
        missing = next((s, t) for s in range(n) for t in range(n) if (s, t) not in found)
        raise MissingView(f"missing view_{missing[0]}_{missing[1]}.png in {path}")
    grid = None
    for s in range(n):
        for t in range(n):
            if (s, t) not in found:
                raise MissingView(f"missing view_{s}_{t}.png in {path}")
            img = _read_png(os.path.join(path, found[(s, t)]))
            if grid is None:
                grid = np.empty((n, n) + img.shape, dtype=np.float64)
            elif img.shape != grid.shape[2:]:
                raise ShapeMismatch(
                    f"view_{s}_{t}.png has shape {img.shape}, expected {grid.shape[2:]}")
            grid[s, t] = img
    return LightField(views=grid, sampling_period=sampling_period)


def save_light_field(lf: LightField, path: str, bit_depth: int = 16) -> None:
    """Write a scene directory; inverse of :func:`load_light_field` up to
    one quantization step of the chosen bit depth."""
    os.makedirs(path, exist_ok=True)
    if bit_depth == 16:
        peak, dtype = 65535.0, np.uint16
    elif bit_depth == 8:
        peak, dtype = 255.0, np.uint8
    else:
        raise BadCount("bit_depth must be 8 or 16")
    n = lf.angular_resolution
    for s in range(n):
        for t in range(n):
            img = np.clip(lf.views[s, t], 0.0, 1.0)
            raw = (img * peak + 0.5).astype(dtype)[:, :, ::-1]  # RGB -> BGR
            cv2.imwrite(os.path.join(path, f"view_{s}_{t}.png"), raw)


def sample_views(lf_or_n, pattern: str,
                 custom: list[tuple[int, int]] | None = None) -> ViewSelection:
    """Pick the sparse views the display gets to use.

    ``corners4`` takes the four extreme angular coordinates; ``grid3x3``
    the centered 3 x 3 subgrid (requires odd placement, i.e. N - 1 even);
    ``custom`` validates caller-supplied indices.
    """
    n = lf_or_n.angular_resolution if isinstance(lf_or_n, LightField) else int(lf_or_n)
    if pattern == "corners4":
        idx = [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)]
    elif pattern == "grid3x3":
        if n < 3 or (n - 1) % 2:
            raise InfeasiblePattern(f"grid3x3 needs odd N >= 3, got N={n}")
        coords = (0, (n - 1) // 2, n - 1)
        idx = [(s, t) for s in coords for t in coords]
    elif pattern == "custom":
        if not custom:
            raise InfeasiblePattern("custom pattern requires indices")
        idx = [(int(s), int(t)) for s, t in custom]
        if len(set(idx)) != len(idx):
            raise InfeasiblePattern("custom indices must be distinct")
        for s, t in idx:
            if not (0 <= s < n and 0 <= t < n):
                raise InfeasiblePattern(f"index ({s}, {t}) outside the {n} x {n} grid")
    else:
        raise InfeasiblePattern(f"unknown pattern {pattern!r}")
    return ViewSelection(indices=tuple(idx), pattern_name=pattern)


def split_dataset(scenes: list[str], train_count: int, seed: int) -> DatasetSplit:
    """Deterministic seeded shuffle; first ``train_count`` scenes train."""
    scenes = sorted(scenes)
    if not (0 < train_count < len(scenes)):
        raise BadCount(f"train_count {train_count} out of range for {len(scenes)} scenes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes))
    shuffled = [scenes[i] for i in order]
    return DatasetSplit(train_scenes=tuple(shuffled[:train_count]),
                        test_scenes=tuple(shuffled[train_count:]),
                        seed=seed)


def save_focal_stack(path: str, slices: list[np.ndarray], psis: list[float],
                     extra_meta: dict | None = None) -> None:
    """Write ``stack_{j}.png`` slices (clamped, 16-bit) plus a sidecar
    metadata file listing each slice's defocus coefficient."""
    os.makedirs(path, exist_ok=True)
    lines = []
    for j, (img, psi) in enumerate(zip(slices, psis)):
        raw = (np.clip(img, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)[:, :, ::-1]
        cv2.imwrite(os.path.join(path, f"stack_{j}.png"), raw)
        lines.append(f"stack_{j}.png psi={psi!r}")
    if extra_meta:
        for k in sorted(extra_meta):
            lines.append(f"{k}={extra_meta[k]}")
    with open(os.path.join(path, "stack_meta.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
