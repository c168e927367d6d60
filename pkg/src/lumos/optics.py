"""Pupil functions, defocus, point spread functions, and refocusing.

The image formation model: a pupil transmittance map P on a D x D grid is
multiplied by a quadratic defocus phase and Fourier transformed; the
squared magnitude is the incoherent PSF. Convolving a displayed image with
the PSF gives its contribution to the refocused image, and contributions
from sequentially displayed frames add by persistence of vision.

Conventions chosen so the numbers are testable:
  * unitary centered DFT, so PSF energy equals sum(P^2) / N_A exactly
    (Parseval), where N_A is the sample count of the aperture region;
  * the kernel is fftshift-centered: zero defocus with a symmetric pupil
    gives a kernel symmetric about sample (D//2, D//2);
  * the image-plane sample pitch at image distance z_l is
    lambda * z_l / (D * du), with du the pupil sample pitch, which makes
    the geometric-optics shift law hold exactly on the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import (
    BadRange,
    ConfigError,
    ConfigMismatch,
    LengthMismatch,
    NonPositiveDistance,
    OutOfPupil,
    ShapeMismatch,
    SlopeTooLarge,
)


@dataclass(frozen=True)
class OpticalConfig:
    """Geometry of the display optics and of the simulation grids.

    ``pupil_extent`` is the physical width of the aperture region, which
    occupies ``aperture_samples`` grid samples centered in the
    ``pupil_grid_size`` FFT grid. ``aperture_resolution`` is the coded
    aperture cell count per axis.
    """

    wavelength: float = 550e-9
    focal_length: float = 50e-3
    object_distance: float = 100e-3
    pupil_grid_size: int = 128
    pupil_extent: float = 9e-3
    aperture_resolution: int = 9
    aperture_samples: int = 72
    nominal_image_distance: float | None = None
    magnification: float = -1.0

    def __post_init__(self):
        for name in ("wavelength", "focal_length", "object_distance", "pupil_extent"):
            if getattr(self, name) <= 0:
                raise NonPositiveDistance(f"{name} must be positive")
        d, a, l = self.pupil_grid_size, self.aperture_samples, self.aperture_resolution
        if d <= 0 or d & (d - 1):
            raise ConfigError("pupil_grid_size must be a power of two")
        if not (0 < l <= a <= d):
            raise ConfigError("need 0 < aperture_resolution <= aperture_samples <= pupil_grid_size")
        if a % 2:
            raise ConfigError("aperture_samples must be even (centered embedding)")
        if a % l:
            raise ConfigError("aperture_samples must be a multiple of aperture_resolution")
        zi = self.nominal_image_distance
        if zi is None:
            inv = 1.0 / self.focal_length - 1.0 / self.object_distance
            if inv <= 0:
                raise NonPositiveDistance("object distance must exceed the focal length")
            object.__setattr__(self, "nominal_image_distance", 1.0 / inv)
        else:
            if zi <= 0:
                raise NonPositiveDistance("nominal_image_distance must be positive")
            resid = 1.0 / self.object_distance + 1.0 / zi - 1.0 / self.focal_length
            if abs(resid) > 1e-9 / self.focal_length:
                raise ConfigError("nominal_image_distance is not conjugate to object_distance")

    @property
    def sample_pitch(self) -> float:
        """Pupil-plane sample pitch du (meters)."""
        return self.pupil_extent / self.aperture_samples

    @property
    def pupil_radius(self) -> float:
        return self.pupil_extent / 2.0

    @property
    def region_start(self) -> int:
        return self.pupil_grid_size // 2 - self.aperture_samples // 2

    @property
    def cell_samples(self) -> int:
        """Samples per coded-aperture cell."""
        return self.aperture_samples // self.aperture_resolution

    @property
    def region_sample_count(self) -> int:
        """N_A, the PSF energy normalizer."""
        return self.aperture_samples ** 2

    def pixel_pitch(self, z_l: float | None = None) -> float:
        """Image-plane sample pitch at image distance z_l (nominal plane
        by default)."""
        if z_l is None:
            z_l = self.nominal_image_distance
        return self.wavelength * z_l / (self.pupil_grid_size * self.sample_pitch)

    def pupil_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (u, v) coordinate grids over the full D x D plane."""
        d = self.pupil_grid_size
        axis = (np.arange(d) - d // 2) * self.sample_pitch
        return axis[None, :], axis[:, None]

    def defocus_phase(self, psi: float) -> np.ndarray:
        """Quadratic pupil phase (radians) for defocus coefficient psi."""
        u, v = self.pupil_coords()
        r = self.pupil_radius
        return np.pi * psi * (u * u + v * v) / (r * r)

    def psi_per_view_shift(self, grid_n: int) -> float:
        """Defocus coefficient at which the PSF of a view cell one step off
        center is displaced by exactly one pixel."""
        return grid_n * self.aperture_samples / (4.0 * self.pupil_grid_size)


@dataclass(frozen=True)
class DefocusSpec:
    """One focal slice: defocus coefficient and the image distance it
    corresponds to."""

    psi: float
    image_distance: float
    config: OpticalConfig


@dataclass(frozen=True)
class PupilGrid:
    """Transmittance map on the full pupil-plane grid, zero outside the
    embedded aperture region."""

    transmittance: np.ndarray
    config: OpticalConfig


@dataclass
class PointSpreadFunction:
    """Nonnegative intensity kernel for one (aperture, focal plane) pair."""

    kernel: np.ndarray
    total_energy: float
    psi: float
    config: OpticalConfig = field(repr=False)


def defocus_coefficient(cfg: OpticalConfig, z_l: float) -> DefocusSpec:
    """Defocus coefficient of the focal plane at image distance z_l.

    psi = (1/lambda) (1/z_o + 1/z_l - 1/F) (w_p/2)^2; zero exactly at the
    conjugate plane and monotone in 1/z_l.
    """
    if z_l <= 0:
        raise NonPositiveDistance("image distance must be positive")
    bracket = 1.0 / cfg.object_distance + 1.0 / z_l - 1.0 / cfg.focal_length
    psi = bracket * cfg.pupil_radius ** 2 / cfg.wavelength
    return DefocusSpec(psi=psi, image_distance=z_l, config=cfg)


def defocus_from_psi(cfg: OpticalConfig, psi: float) -> DefocusSpec:
    """Inverse of :func:`defocus_coefficient`; image distance may be
    infinite for extreme negative coefficients."""
    inv_zl = psi * cfg.wavelength / cfg.pupil_radius ** 2 \
        + 1.0 / cfg.focal_length - 1.0 / cfg.object_distance
    z_l = 1.0 / inv_zl if inv_zl > 0 else np.inf
    return DefocusSpec(psi=psi, image_distance=z_l, config=cfg)


def rect_pupil(cfg: OpticalConfig, grid_n: int, s: int, t: int, width_cells: int = 1) -> PupilGrid:
    """Open rectangle at angular position (s, t) of an n x n grid tiling
    the aperture region.

    Cell pitch is ``pupil_extent / grid_n``; ``width_cells`` widens the
    rectangle symmetrically about the cell center. With width 1 the
    rectangles of all (s, t) tile the region exactly.
    """
    a = cfg.aperture_samples
    if grid_n <= 0 or a % grid_n:
        raise ConfigMismatch(f"aperture_samples {a} not divisible by grid {grid_n}")
    cell = a // grid_n
    if not (0 <= s < grid_n and 0 <= t < grid_n):
        raise OutOfPupil(f"index ({s}, {t}) outside {grid_n} x {grid_n} grid")
    wsamp = width_cells * cell
    if (cell * (2 * s + 1) - wsamp) % 2 or (cell * (2 * t + 1) - wsamp) % 2:
        raise OutOfPupil("rectangle is not alignable on the sample grid")
    y0 = cfg.region_start + (cell * (2 * s + 1) - wsamp) // 2
    x0 = cfg.region_start + (cell * (2 * t + 1) - wsamp) // 2
    if y0 < cfg.region_start or x0 < cfg.region_start \
            or y0 + wsamp > cfg.region_start + a or x0 + wsamp > cfg.region_start + a:
        raise OutOfPupil("rectangle extends past the aperture region")
    d = cfg.pupil_grid_size
    tr = np.zeros((d, d))
    tr[y0:y0 + wsamp, x0:x0 + wsamp] = 1.0
    return PupilGrid(transmittance=tr, config=cfg)


def full_open_pupil(cfg: OpticalConfig) -> PupilGrid:
    """Aperture region fully open."""
    d, a, o = cfg.pupil_grid_size, cfg.aperture_samples, cfg.region_start
    tr = np.zeros((d, d))
    tr[o:o + a, o:o + a] = 1.0
    return PupilGrid(transmittance=tr, config=cfg)


def embed_coded_aperture(values: np.ndarray, cfg: OpticalConfig) -> PupilGrid:
    """Replicate an l x l coded-aperture map over the aperture region.

    Cells are physical shutter elements, so the upsampling is
    nearest-neighbor replication, not interpolation.
    """
    values = np.asarray(values, dtype=np.float64)
    l = cfg.aperture_resolution
    if values.shape != (l, l):
        raise ShapeMismatch(f"expected ({l}, {l}) aperture, got {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise BadRange("aperture transmittance must lie in [0, 1]")
    d, o = cfg.pupil_grid_size, cfg.region_start
    s = cfg.cell_samples
    tr = np.zeros((d, d))
    tr[o:o + l * s, o:o + l * s] = np.kron(values, np.ones((s, s)))
    return PupilGrid(transmittance=tr, config=cfg)


def psf(pupil: PupilGrid, defocus: DefocusSpec) -> PointSpreadFunction:
    """Intensity point spread function of a pupil at one focal slice.

    kernel = |U{P exp(i pi psi (u^2+v^2) / r^2)}|^2 / N_A. By Parseval the
    total energy equals sum(P^2) / N_A for every psi.
    """
    if pupil.config is not defocus.config and pupil.config != defocus.config:
        raise ConfigMismatch("pupil and defocus were built from different configs")
    cfg = pupil.config
    fld = pupil.transmittance * np.exp(1j * cfg.defocus_phase(defocus.psi))
    amp = numerics.ufft2(fld)
    kernel = (amp * np.conj(amp)).real / cfg.region_sample_count
    return PointSpreadFunction(kernel=kernel, total_energy=float(kernel.sum()),
                               psi=defocus.psi, config=cfg)


def convolve(image: np.ndarray, kernel: PointSpreadFunction | np.ndarray) -> np.ndarray:
    """Per-channel zero-padded same convolution of an image with a PSF."""
    ker = kernel.kernel if isinstance(kernel, PointSpreadFunction) else np.asarray(kernel)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        return numerics.conv2_same(img.transpose(2, 0, 1), ker).transpose(1, 2, 0)
    return numerics.conv2_same(img, ker)


def refocus_sum(images: list[np.ndarray], psfs: list[PointSpreadFunction]) -> np.ndarray:
    """Perceived refocused image: sum of each frame convolved with its PSF.

    The output is left unclamped; clamping happens only at export and
    before quality metrics.
    """
    if len(images) != len(psfs) or not images:
        raise LengthMismatch(f"{len(images)} images vs {len(psfs)} PSFs")
    out = convolve(images[0], psfs[0])
    for img, k in zip(images[1:], psfs[1:]):
        out += convolve(img, k)
    return out


def shift_and_add_oracle(views: dict[tuple[int, int], np.ndarray], grid_n: int,
                         slope: float) -> np.ndarray:
    """Classic refocusing by shifting sub-aperture views and averaging.

    Views are translated by (-s_c * slope, -t_c * slope) pixels, with
    (s_c, t_c) the angular offsets from the grid center, then averaged with
    bilinear sub-pixel interpolation and zero-filled borders. Used as an
    independent cross-check of the simulated refocusing, not as part of
    the display pipeline.
    """
    some = next(iter(views.values()))
    h, w = some.shape[:2]
    if abs(slope) * (grid_n - 1) / 2.0 > min(h, w):
        raise SlopeTooLarge(f"slope {slope} shifts views beyond the image")
    c = (grid_n - 1) / 2.0
    acc = np.zeros_like(some, dtype=np.float64)
    for (s, t), img in views.items():
        acc += numerics.bilinear_shift(img, -(s - c) * slope, -(t - c) * slope)
    return acc / len(views)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def save_psf(path, p: PointSpreadFunction) -> None:
    """Binary PSF dump: text header, then row-major little-endian float32."""
    d = p.kernel.shape[0]
    header = (f"lumos-psf 1\nsize {d} {d}\npsi {p.psi!r}\n"
              f"energy {p.total_energy!r}\n\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(p.kernel.astype("<f4").tobytes())


def load_psf(path) -> tuple[np.ndarray, float, float]:
    with open(path, "rb") as f:
        raw = f.read()
    head, _, body = raw.partition(b"\n\n")
    lines = head.decode("ascii").splitlines()
    size = tuple(int(x) for x in lines[1].split()[1:])
    psi = float(lines[2].split()[1])
    energy = float(lines[3].split()[1])
    kernel = np.frombuffer(body, dtype="<f4").reshape(size).astype(np.float64)
    return kernel, psi, energy


def save_psf_png(path, p: PointSpreadFunction) -> None:
    """16-bit visualization, max-normalized (lossy, for inspection only)."""
    import cv2

    k = p.kernel
    peak = k.max()
    img = np.zeros_like(k) if peak == 0 else k / peak
    cv2.imwrite(str(path), (img * 65535.0 + 0.5).astype(np.uint16))


def save_aperture(path_csv, path_png, values: np.ndarray) -> None:
    """l x l transmittances as CSV plus a 16-bit grayscale PNG."""
    import cv2

    np.savetxt(path_csv, values, delimiter=",", fmt="%.17g")
    img = np.clip(values, 0.0, 1.0)
    cv2.imwrite(str(path_png), (img * 65535.0 + 0.5).astype(np.uint16))
