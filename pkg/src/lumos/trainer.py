"""End-to-end optimization loop, checkpointing, evaluation, and ablations.

One epoch is one pass over the training scenes with a fresh random crop
per scene. Ground-truth focal stacks are rendered once per scene at full
size and cropped per epoch; inside the border-excluded loss region this is
identical to rendering each crop separately. Per-epoch randomness is
derived from (seed, epoch), so resuming from a checkpoint continues the
exact sequence an uninterrupted run would have produced.
"""
from __future__ import annotations

import dataclasses
import io
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import display, metrics, optics
from .display import ApertureBank, FocalStackSpec
from .encoder import EncoderConfig, EncoderWeights, init_weights
from .errors import ConfigError, ConfigMismatch, NonFiniteLoss
from .lfdata import LightField, ViewSelection, sample_views

CHECKPOINT_MAGIC = b"LUMOSCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; the flat key=value config file mirrors
    these fields exactly."""

    # data / geometry
    pattern: str = "corners4"
    crop: int = 128
    border: int = 16
    # pipeline sizes
    n: int = 4
    k: int = 4
    l: int = 9
    m: int = 9
    psi_max: float = 0.0  # 0 means: calibrate to one pixel of disparity per view step
    beta: float = 2.0
    # coded apertures
    aperture_mode: str = "continuous"
    temperature: float = 10.0
    symmetry: str = "free"
    # encoder
    channels: int = 64
    blocks: int = 10
    kernel: int = 3
    # optimization
    learn_f: bool = True
    learn_apertures: bool = True
    epochs: int = 10000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    # optics
    pupil_grid: int = 128
    aperture_samples: int = 72
    wavelength: float = 550e-9
    focal_length: float = 50e-3
    object_distance: float = 100e-3
    pupil_extent: float = 9e-3

    def __post_init__(self):
        for name in ("crop", "n", "k", "l", "m", "epochs", "channels", "kernel",
                     "pupil_grid", "aperture_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.border < 0 or self.blocks < 0 or self.checkpoint_every < 0:
            raise ConfigError("border, blocks, checkpoint_every must be >= 0")
        if not self.learn_f and self.k != self.n:
            raise ConfigError("the identity display path (learn_f=False) requires k = n")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.crop <= 2 * self.border:
            raise ConfigError("crop must exceed twice the border band")

    def optical_config(self) -> optics.OpticalConfig:
        return optics.OpticalConfig(
            wavelength=self.wavelength, focal_length=self.focal_length,
            object_distance=self.object_distance, pupil_grid_size=self.pupil_grid,
            pupil_extent=self.pupil_extent, aperture_resolution=self.l,
            aperture_samples=self.aperture_samples)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(n=self.n, k=self.k, channels=self.channels,
                             blocks=self.blocks, kernel=self.kernel)

    def stack_spec(self, grid_n: int) -> FocalStackSpec:
        psi_max = self.psi_max
        if psi_max == 0.0:
            psi_max = self.optical_config().psi_per_view_shift(grid_n)
        return FocalStackSpec.linear(self.m, psi_max)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def config_to_text(cfg: TrainConfig) -> str:
    """Canonical flat text form: sorted key=value lines."""
    lines = []
    for f in sorted(dataclasses.fields(TrainConfig), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_mapping(mapping: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Build a config from string key=value pairs; unknown keys are hard
    errors so typos in optics parameters cannot pass silently."""
    values = dataclasses.asdict(base) if base else {}
    for key, raw in mapping.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        t = _FIELD_TYPES[key]
        raw = raw.strip()
        if t in ("bool", bool):
            if raw not in ("True", "False", "true", "false", "1", "0"):
                raise ConfigError(f"bad boolean for {key}: {raw!r}")
            values[key] = raw in ("True", "true", "1")
        elif t in ("int", int):
            values[key] = int(raw)
        elif t in ("float", float):
            values[key] = float(raw)
        else:
            values[key] = raw
    return TrainConfig(**values)


def parse_config_file(path: str, base: TrainConfig | None = None) -> TrainConfig:
    mapping = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            mapping[key.strip()] = val
    return config_from_mapping(mapping, base)


@dataclass
class Checkpoint:
    config: TrainConfig
    encoder_arrays: dict[str, np.ndarray] | None
    logits: np.ndarray
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    epoch: int
    loss_history: list[float] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION


def _write_array(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(f) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", f.read(4))
    name = f.read(nlen).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Versioned binary: magic, header, canonical config text, then named
    little-endian float64 arrays in sorted-name order."""
    arrays: dict[str, np.ndarray] = {"logits": ckpt.logits}
    if ckpt.encoder_arrays is not None:
        for k, v in ckpt.encoder_arrays.items():
            arrays[f"enc/{k}"] = v
    for k, v in ckpt.adam_m.items():
        arrays[f"adam_m/{k}"] = v
    for k, v in ckpt.adam_v.items():
        arrays[f"adam_v/{k}"] = v
    arrays["loss_history"] = np.asarray(ckpt.loss_history, dtype=np.float64)

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    cfg_text = config_to_text(ckpt.config).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_text)))
    buf.write(cfg_text)
    buf.write(struct.pack("<B", 1 if ckpt.encoder_arrays is not None else 0))
    buf.write(struct.pack("<Q", ckpt.epoch))
    buf.write(struct.pack("<Q", ckpt.adam_t))
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        _write_array(buf, name, arrays[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a lumos checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", f.read(4))
        cfg_text = f.read(clen).decode("utf-8")
        (has_enc,) = struct.unpack("<B", f.read(1))
        (epoch,) = struct.unpack("<Q", f.read(8))
        (adam_t,) = struct.unpack("<Q", f.read(8))
        (count,) = struct.unpack("<I", f.read(4))
        arrays = dict(_read_array(f) for _ in range(count))
    mapping = dict(line.split("=", 1) for line in cfg_text.splitlines() if line)
    config = config_from_mapping(mapping)
    enc = {k[4:]: v for k, v in arrays.items() if k.startswith("enc/")} if has_enc else None
    return Checkpoint(
        config=config,
        encoder_arrays=enc,
        logits=arrays["logits"],
        adam_m={k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        adam_v={k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")},
        adam_t=adam_t,
        epoch=epoch,
        loss_history=list(arrays["loss_history"]),
        version=version,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _SceneData:
    """Per-scene precomputation: selected views and the full-size ground
    truth stack."""

    def __init__(self, lf: LightField, selection: ViewSelection,
                 cfg: optics.OpticalConfig, spec: FocalStackSpec):
        self.views = [lf.view(s, t) for s, t in selection.indices]
        self.gt = display.ground_truth_stack(lf, cfg, spec).slices
        self.height, self.width = lf.spatial_resolution


def _graph_loss(views, gt_crops, wmaps, config: TrainConfig, bank: ApertureBank,
                logits: ad.Value, enc_values, cfg, spec, border: int) -> ad.Value:
    enc_cfg = config.encoder_config() if enc_values is not None else None
    slices = display.ctdm_graph(views, enc_values, enc_cfg, bank, logits, cfg, spec)
    h, w = gt_crops[0].shape[:2]
    total = None
    for sl, gt, wm in zip(slices, gt_crops, wmaps.maps):
        sl = ad.crop2d(sl, border, h - border, border, w - border)
        target = gt[border:h - border, border:w - border]
        wcrop = wm[border:h - border, border:w - border]
        term = ad.sum_reduce(ad.const_mul(ad.l1_diff(sl, ad.Value(target)), wcrop[:, :, None]))
        total = term if total is None else ad.add(total, term)
    count = len(gt_crops) * (h - 2 * border) * (w - 2 * border) * 3
    return ad.scale(total, 1.0 / count)


def _numpy_loss(stack: list[np.ndarray], gt_crops, wmaps, border: int) -> float:
    return metrics.weighted_l1(stack, gt_crops, wmaps, border=border)


def _dump_diagnostics(out_dir: str | None, bank: ApertureBank,
                      enc_arrays: dict | None, loss: float, epoch: int) -> str:
    lines = [f"non-finite loss {loss!r} at epoch {epoch}"]
    aps = display.effective_apertures(bank)
    for i, a in enumerate(aps):
        lines.append(f"aperture {i}: min={a.min():.6g} max={a.max():.6g} mean={a.mean():.6g}")
    if enc_arrays:
        for name in sorted(enc_arrays):
            a = enc_arrays[name]
            finite = np.isfinite(a).all()
            lines.append(f"weight {name}: |max|={np.abs(a).max():.6g} finite={finite}")
    text = "\n".join(lines)
    if out_dir:
        with open(os.path.join(out_dir, "diagnostic.txt"), "w") as f:
            f.write(text + "\n")
    return text


def train(config: TrainConfig, train_ids: list[str],
          scenes: Mapping[str, LightField] | Callable[[str], LightField],
          out_dir: str | None = None, resume: Checkpoint | None = None,
          progress: Callable[[int, float], None] | None = None) -> Checkpoint:
    """Optimize the parameter subset selected by learn_f / learn_apertures.

    Returns the final checkpoint; intermediate checkpoints are written to
    ``out_dir`` at the configured cadence. Training is bit-deterministic
    for a fixed seed and single-threaded execution, and resuming from any
    checkpoint reproduces the uninterrupted run exactly.
    """
    if not train_ids:
        raise ConfigError("no training scenes")
    provider = scenes if callable(scenes) else scenes.__getitem__
    train_ids = sorted(train_ids)
    cfg = config.optical_config()

    first = provider(train_ids[0])
    grid_n = first.angular_resolution
    if cfg.aperture_samples % grid_n:
        raise ConfigMismatch(
            f"aperture_samples {cfg.aperture_samples} not divisible by the "
            f"{grid_n} x {grid_n} angular grid")
    selection = sample_views(grid_n, config.pattern)
    if selection.n != config.n:
        raise ConfigError(f"pattern {config.pattern} gives n={selection.n}, config says {config.n}")
    spec = config.stack_spec(grid_n)

    data: dict[str, _SceneData] = {}
    for sid in train_ids:
        lf = provider(sid) if sid != train_ids[0] else first
        if lf.angular_resolution != grid_n:
            raise ConfigMismatch(f"scene {sid} has N={lf.angular_resolution}, expected {grid_n}")
        data[sid] = _SceneData(lf, selection, cfg, spec)

    # parameterization
    if resume is not None:
        enc_arrays = dict(resume.encoder_arrays) if resume.encoder_arrays is not None else None
        logits = resume.logits.copy()
        start_epoch = resume.epoch
        history = list(resume.loss_history)
    else:
        enc_arrays = init_weights(config.encoder_config(), config.seed).arrays if config.learn_f else None
        base = 1 if config.symmetry == "mirrored4" else config.k
        logits = np.zeros((base, config.l, config.l))
        start_epoch = 0
        history = []

    bank = ApertureBank(k=config.k, resolution=config.l, mode=config.aperture_mode,
                        temperature=config.temperature, symmetry=config.symmetry,
                        logits=logits)

    params: dict[str, np.ndarray] = {}
    if config.learn_f and enc_arrays is not None:
        params.update(enc_arrays)
    if config.learn_apertures:
        params["aperture_logits"] = logits

    state = ad.AdamState(params, lr=config.lr, beta1=config.adam_beta1,
                         beta2=config.adam_beta2, eps=config.adam_eps)
    if resume is not None:
        for k in params:
            state.m[k] = resume.adam_m[k].copy()
            state.v[k] = resume.adam_v[k].copy()
        state.t = resume.adam_t

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(config=config,
                          encoder_arrays=enc_arrays,
                          logits=logits,
                          adam_m=state.m, adam_v=state.v, adam_t=state.t,
                          epoch=epoch, loss_history=history)

    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(epoch,)))
        epoch_losses = []
        for sid in train_ids:
            sd = data[sid]
            ch = min(config.crop, sd.height)
            cw = min(config.crop, sd.width)
            y0 = int(rng.integers(0, sd.height - ch + 1))
            x0 = int(rng.integers(0, sd.width - cw + 1))
            views = [v[y0:y0 + ch, x0:x0 + cw] for v in sd.views]
            gt_crops = [g[y0:y0 + ch, x0:x0 + cw] for g in sd.gt]
            wmaps = metrics.weight_maps(gt_crops, config.beta)

            if params:
                logit_value = ad.Value(logits, requires_grad=config.learn_apertures)
                if config.learn_f:
                    enc_values = {k: ad.Value(v, requires_grad=True) for k, v in enc_arrays.items()}
                else:
                    enc_values = None
                loss_v = _graph_loss(views, gt_crops, wmaps, config, bank, logit_value,
                                     enc_values, cfg, spec, config.border)
                loss = float(loss_v.data)
                if not np.isfinite(loss):
                    _dump_diagnostics(out_dir, bank, enc_arrays, loss, epoch)
                    raise NonFiniteLoss(f"loss became {loss!r} at epoch {epoch}")
                ad.backward(loss_v)
                leaves = dict(enc_values) if enc_values else {}
                if config.learn_apertures:
                    leaves["aperture_logits"] = logit_value
                grads = ad.collect_grads({k: leaves[k] for k in params})
                ad.adam_step(params, grads, state)
            else:
                # nothing to learn: the display is exactly the TDM baseline
                baseline = display.tdm_forward_views(views, selection.indices, grid_n, cfg, spec)
                loss = _numpy_loss(baseline, gt_crops, wmaps, config.border)
                if not np.isfinite(loss):
                    _dump_diagnostics(out_dir, bank, enc_arrays, loss, epoch)
                    raise NonFiniteLoss(f"loss became {loss!r} at epoch {epoch}")
            history.append(loss)
            epoch_losses.append(loss)
        if progress is not None:
            progress(epoch, float(np.mean(epoch_losses)))
        if out_dir and config.checkpoint_every \
                and (epoch + 1) % config.checkpoint_every == 0 and epoch + 1 < config.epochs:
            save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), snapshot(epoch + 1))

    final = snapshot(config.epochs)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), final)
        with open(os.path.join(out_dir, "loss_history.csv"), "w") as f:
            f.write("step,loss\n")
            for i, v in enumerate(history):
                f.write(f"{i},{v!r}\n")
    return final


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class SliceScore:
    scene: str
    method: str
    index: int
    psi: float
    psnr: float
    ssim: float


@dataclass
class Report:
    rows: list[SliceScore]

    def scene_average(self, scene: str, method: str) -> tuple[float, float]:
        rows = [r for r in self.rows if r.scene == scene and r.method == method]
        return (float(np.mean([r.psnr for r in rows])),
                float(np.mean([r.ssim for r in rows])))

    def overall(self, method: str) -> tuple[float, float]:
        scenes = sorted({r.scene for r in self.rows if r.method == method})
        pairs = [self.scene_average(s, method) for s in scenes]
        return (float(np.mean([p[0] for p in pairs])),
                float(np.mean([p[1] for p in pairs])))

    def methods(self) -> list[str]:
        return sorted({r.method for r in self.rows})

    def to_text(self) -> str:
        lines = []
        for r in self.rows:
            lines.append(f"scene={r.scene} method={r.method} slice={r.index} "
                         f"psi={r.psi:.6g} psnr={r.psnr:.6f} ssim={r.ssim:.6f}")
        for method in self.methods():
            for scene in sorted({r.scene for r in self.rows if r.method == method}):
                p, s = self.scene_average(scene, method)
                lines.append(f"scene={scene} method={method} average psnr={p:.6f} ssim={s:.6f}")
        for method in self.methods():
            p, s = self.overall(method)
            lines.append(f"overall method={method} psnr={p:.6f} ssim={s:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["scene,method,slice,psi,psnr,ssim"]
        for r in self.rows:
            lines.append(f"{r.scene},{r.method},{r.index},{r.psi:.6g},{r.psnr:.6f},{r.ssim:.6f}")
        return "\n".join(lines) + "\n"


def _score_stack(scene: str, method: str, stack: list[np.ndarray],
                 gt: list[np.ndarray], psis, border: int) -> list[SliceScore]:
    rows = []
    for j, (a, b, psi) in enumerate(zip(stack, gt, psis)):
        ac = np.clip(a, 0.0, 1.0)[border:a.shape[0] - border, border:a.shape[1] - border]
        bc = np.clip(b, 0.0, 1.0)[border:b.shape[0] - border, border:b.shape[1] - border]
        rows.append(SliceScore(scene=scene, method=method, index=j, psi=float(psi),
                               psnr=metrics.psnr(ac, bc), ssim=metrics.ssim(ac, bc)))
    return rows


def render_for_eval(ckpt: Checkpoint, lf: LightField) -> tuple[list[np.ndarray], list[np.ndarray], FocalStackSpec]:
    """Displayed and ground-truth stacks for one scene under a checkpoint.

    Binary-mode checkpoints evaluate with frozen {0, 1} apertures.
    """
    config = ckpt.config
    cfg = config.optical_config()
    grid_n = lf.angular_resolution
    spec = config.stack_spec(grid_n)
    selection = sample_views(grid_n, config.pattern)
    gt = display.ground_truth_stack(lf, cfg, spec).slices

    mode = config.aperture_mode
    if mode == "binary-relaxed":
        mode = "binary-frozen"
    bank = ApertureBank(k=config.k, resolution=config.l, mode=mode,
                        temperature=config.temperature, symmetry=config.symmetry,
                        logits=ckpt.logits)

    if not config.learn_f and not config.learn_apertures:
        stack = display.tdm_forward(lf, selection, cfg, spec).slices
    else:
        weights = None
        if config.learn_f:
            weights = EncoderWeights(config=config.encoder_config(),
                                     arrays=ckpt.encoder_arrays, init_seed=config.seed)
        stack = display.ctdm_forward(lf, selection, weights, bank, cfg, spec).slices
    return stack, gt, spec


def evaluate(ckpt: Checkpoint, test_ids: list[str],
             scenes: Mapping[str, LightField] | Callable[[str], LightField],
             jobs: int = 1, method_name: str = "ctdm",
             include_baseline: bool = True) -> Report:
    """Score a checkpoint on held-out scenes, plus the TDM baseline on the
    same scenes for paired comparison."""
    provider = scenes if callable(scenes) else scenes.__getitem__
    config = ckpt.config
    cfg = config.optical_config()
    border = config.border

    def one(sid: str) -> list[SliceScore]:
        lf = provider(sid)
        stack, gt, spec = render_for_eval(ckpt, lf)
        rows = _score_stack(sid, method_name, stack, gt, spec.psi_values, border)
        if include_baseline:
            selection = sample_views(lf.angular_resolution, config.pattern)
            base = display.tdm_forward(lf, selection, cfg, spec).slices
            rows += _score_stack(sid, "tdm-baseline", base, gt, spec.psi_values, border)
        return rows

    ids = sorted(test_ids)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(one, ids))
    else:
        chunks = [one(sid) for sid in ids]
    return Report(rows=[r for chunk in chunks for r in chunk])


def ablate(deltas: list[tuple[str, dict[str, str]]], base: TrainConfig,
           train_ids: list[str], test_ids: list[str],
           scenes: Mapping[str, LightField] | Callable[[str], LightField],
           out_dir: str | None = None,
           progress: Callable[[int, float], None] | None = None) -> tuple[Report, str]:
    """Train and evaluate one variant per delta (shared seed and data
    order) and emit a comparative table. An empty grid reports the base
    config alone."""
    variants = list(deltas) if deltas else [("base", {})]
    rows: list[SliceScore] = []
    summary = ["variant psnr ssim"]
    for name, overrides in variants:
        cfg_v = config_from_mapping(overrides, base=base)
        vdir = None
        if out_dir:
            vdir = os.path.join(out_dir, name)
            os.makedirs(vdir, exist_ok=True)
        ckpt = train(cfg_v, train_ids, scenes, out_dir=vdir, progress=progress)
        rep = evaluate(ckpt, test_ids, scenes, method_name=name, include_baseline=False)
        rows += rep.rows
        p, s = rep.overall(name)
        summary.append(f"{name} {p:.6f} {s:.6f}")
    return Report(rows=rows), "\n".join(summary) + "\n"
