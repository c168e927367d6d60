"""The three renderers: ground-truth focal stack, TDM baseline, and the
coded TDM forward pass, plus the coded-aperture parameterization.

Ground truth is rendered through the same optics simulator as everything
else, using the full angular grid with one rectangular aperture cell per
view. The TDM baseline renders the selected sparse views the same way,
so rendering with every view reproduces the ground truth bit for bit. The
coded path displays k encoded images through k learned coded apertures.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import optics
from .encoder import EncoderConfig, EncoderWeights, encode
from .errors import BadMode, ConfigError, LengthMismatch, ShapeMismatch
from .lfdata import LightField, ViewSelection
from .optics import OpticalConfig, defocus_from_psi

APERTURE_MODES = ("continuous", "binary-relaxed", "binary-frozen")
SYMMETRIES = ("free", "mirrored4")


@dataclass(frozen=True)
class FocalStackSpec:
    """Which focal slices to render, by defocus coefficient."""

    psi_values: tuple[float, ...]

    def __post_init__(self):
        if not self.psi_values:
            raise ConfigError("need at least one focal slice")
        if list(self.psi_values) != sorted(self.psi_values):
            raise ConfigError("psi values must be sorted ascending")
        if len(self.psi_values) % 2 and not any(p == 0.0 for p in self.psi_values):
            raise ConfigError("an odd slice count must include psi = 0")

    @property
    def m(self) -> int:
        return len(self.psi_values)

    @staticmethod
    def linear(m: int, psi_max: float) -> "FocalStackSpec":
        """Linear sweep over [-psi_max, +psi_max]."""
        if m < 1:
            raise ConfigError("m must be positive")
        if m == 1:
            return FocalStackSpec(psi_values=(0.0,))
        vals = np.linspace(-psi_max, psi_max, m)
        if m % 2:
            vals[m // 2] = 0.0
        return FocalStackSpec(psi_values=tuple(float(v) for v in vals))


@dataclass
class FocalStack:
    """m refocused images; values are left unclamped by construction."""

    slices: list[np.ndarray]
    spec: FocalStackSpec

    def __post_init__(self):
        if len(self.slices) != self.spec.m:
            raise LengthMismatch(f"{len(self.slices)} slices vs spec m={self.spec.m}")


@dataclass
class ApertureBank:
    """k coded apertures parameterized by unconstrained logits.

    ``mode`` selects how logits map to transmittances: plain sigmoid
    (continuous), a temperature-sharpened sigmoid used while training
    binary apertures (binary-relaxed), or hard thresholding at 0.5 with
    ties mapping to 0 (binary-frozen). Under ``mirrored4`` only the first
    aperture's logits exist; apertures 2-4 are its horizontal, vertical,
    and double mirrors and can never be updated independently.
    """

    k: int
    resolution: int
    mode: str = "continuous"
    temperature: float = 10.0
    symmetry: str = "free"
    logits: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mode not in APERTURE_MODES:
            raise BadMode(f"mode must be one of {APERTURE_MODES}, got {self.mode!r}")
        if self.symmetry not in SYMMETRIES:
            raise BadMode(f"symmetry must be one of {SYMMETRIES}, got {self.symmetry!r}")
        if self.symmetry == "mirrored4" and self.k != 4:
            raise BadMode("mirrored4 symmetry requires k = 4")
        base = 1 if self.symmetry == "mirrored4" else self.k
        if self.logits is None:
            self.logits = np.zeros((base, self.resolution, self.resolution))
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (base, self.resolution, self.resolution):
            raise ShapeMismatch(
                f"logits must be ({base}, {self.resolution}, {self.resolution}),"
                f" got {self.logits.shape}")

    @property
    def trainable_logits(self) -> np.ndarray:
        """The independently updatable parameter array."""
        return self.logits


def _mirror4(maps: list) -> list:
    """Aperture 1 plus its horizontal, vertical, and double mirrors."""
    base = maps[0]
    if isinstance(base, ad.Value):
        return [base, ad.flip2d(base, False, True), ad.flip2d(base, True, False),
                ad.flip2d(base, True, True)]
    return [base, base[:, ::-1].copy(), base[::-1, :].copy(), base[::-1, ::-1].copy()]


def effective_apertures(bank: ApertureBank) -> np.ndarray:
    """Transmittance maps (k, l, l) in [0, 1] for the bank's mode."""
    from scipy.special import expit

    if bank.mode == "continuous":
        maps = [expit(lg) for lg in bank.logits]
    elif bank.mode == "binary-relaxed":
        maps = [expit(bank.temperature * lg) for lg in bank.logits]
    elif bank.mode == "binary-frozen":
        maps = [np.where(expit(lg) > 0.5, 1.0, 0.0) for lg in bank.logits]
    else:
        raise BadMode(bank.mode)
    if bank.symmetry == "mirrored4":
        maps = _mirror4(maps)
    return np.stack(maps)


def aperture_values(bank: ApertureBank, logits: ad.Value) -> list[ad.Value]:
    """Graph-mode transmittances from a Value-wrapped logit array.

    Only the continuous and binary-relaxed modes are differentiable; the
    frozen mode enters the graph as constants.
    """
    if bank.mode == "continuous":
        maps = [ad.sigmoid(ad.take_slice(logits, i)) for i in range(logits.data.shape[0])]
    elif bank.mode == "binary-relaxed":
        maps = [ad.sigmoid(ad.scale(ad.take_slice(logits, i), bank.temperature))
                for i in range(logits.data.shape[0])]
    elif bank.mode == "binary-frozen":
        maps = [ad.Value(m) for m in effective_apertures(bank)]
        return list(maps)
    else:
        raise BadMode(bank.mode)
    if bank.symmetry == "mirrored4":
        maps = _mirror4(maps)
    return maps


def view_psfs(cfg: OpticalConfig, grid_n: int, indices, psi: float) -> list[optics.PointSpreadFunction]:
    """Rectangular single-cell PSFs for the given angular indices."""
    spec = defocus_from_psi(cfg, psi)
    return [optics.psf(optics.rect_pupil(cfg, grid_n, s, t, 1), spec) for s, t in indices]


def tdm_forward_views(images: list[np.ndarray], indices, grid_n: int,
                      cfg: OpticalConfig, spec: FocalStackSpec,
                      jobs: int = 1) -> list[np.ndarray]:
    """TDM rendering from already-extracted (possibly cropped) views.

    Slices are pure functions of the inputs, so ``jobs > 1`` fans them out
    to worker threads without changing any value.
    """
    def one(psi: float) -> np.ndarray:
        psfs = view_psfs(cfg, grid_n, indices, psi)
        return optics.refocus_sum(images, psfs)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(one, spec.psi_values))
    return [one(psi) for psi in spec.psi_values]


def tdm_forward(lf: LightField, selection: ViewSelection, cfg: OpticalConfig,
                spec: FocalStackSpec, jobs: int = 1) -> FocalStack:
    """Time-division multiplexed display of the selected views.

    Each view is shown through a one-cell rectangular aperture at its own
    angular position (cell pitch = pupil_extent / N even for sparse
    selections, so per-view PSFs match the ground-truth renderer).
    """
    images = [lf.view(s, t) for s, t in selection.indices]
    slices = tdm_forward_views(images, selection.indices, lf.angular_resolution,
                               cfg, spec, jobs=jobs)
    return FocalStack(slices=slices, spec=spec)


def ground_truth_stack(lf: LightField, cfg: OpticalConfig, spec: FocalStackSpec,
                       jobs: int = 1) -> FocalStack:
    """Reference focal stack from the full angular grid (same optics)."""
    n = lf.angular_resolution
    full = ViewSelection(indices=tuple((s, t) for s in range(n) for t in range(n)),
                         pattern_name="custom")
    return tdm_forward(lf, full, cfg, spec, jobs=jobs)


def _coded_psf_value(ap: ad.Value, cfg: OpticalConfig, phase: np.ndarray) -> ad.Value:
    """Graph-mode PSF of a coded aperture at a fixed defocus phase."""
    pupil = ad.replicate_embed(ap, cfg.cell_samples, cfg.pupil_grid_size)
    fld = ad.const_mul(pupil, np.exp(1j * phase))
    return ad.scale(ad.abs2(ad.ufft2(fld)), 1.0 / cfg.region_sample_count)


def ctdm_graph(views, enc_weights: dict | EncoderWeights | None,
               enc_config: EncoderConfig | None,
               bank: ApertureBank, logits: ad.Value,
               cfg: OpticalConfig, spec: FocalStackSpec) -> list[ad.Value]:
    """Differentiable coded-TDM forward pass; returns slice Values.

    ``enc_weights`` may be None for the identity display path (encoded
    image i := view i, requires k = n). Gradients flow to the encoder
    weights and to the aperture logits in the continuous and
    binary-relaxed modes.
    """
    if enc_weights is None:
        if bank.k != len(views):
            raise ConfigError("identity display path requires k = n")
        encoded = [ad.as_value(v) for v in views]
    else:
        encoded = encode(views, enc_weights, enc_config)
    if len(encoded) != bank.k:
        raise LengthMismatch(f"{len(encoded)} encoded images vs k={bank.k}")
    aps = aperture_values(bank, logits)
    slices = []
    for psi in spec.psi_values:
        phase = cfg.defocus_phase(psi)
        acc = None
        for img, ap in zip(encoded, aps):
            kernel = _coded_psf_value(ap, cfg, phase)
            term = ad.conv2_same(img, kernel)
            acc = term if acc is None else ad.add(acc, term)
        slices.append(acc)
    return slices


def ctdm_forward(lf_or_views, selection: ViewSelection | None,
                 weights: EncoderWeights | None, bank: ApertureBank,
                 cfg: OpticalConfig, spec: FocalStackSpec) -> FocalStack:
    """Coded-TDM rendering to plain arrays (no gradients retained)."""
    if isinstance(lf_or_views, LightField):
        views = [lf_or_views.view(s, t) for s, t in selection.indices]
    else:
        views = list(lf_or_views)
    logits = ad.Value(bank.logits)
    slices = ctdm_graph(views, weights, weights.config if weights else None,
                        bank, logits, cfg, spec)
    return FocalStack(slices=[s.data for s in slices], spec=spec)
