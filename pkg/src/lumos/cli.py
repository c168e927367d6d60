"""Command line interface.

Subcommands: render-gt, train, eval, ablate, gradcheck, export-apertures.
Every command writes a manifest (command line, resolved config, input
hashes, version, timestamp) into its output directory; all randomness
flows from --seed, with the LUMOS_SEED environment variable as fallback.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime
import hashlib
import os
import sys

import numpy as np

from . import __version__, display, lfdata, metrics, optics, trainer
from .errors import DataError, LumosError, NumericalError

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths: list[str]) -> list[str]:
    out = []
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                full = os.path.join(p, name)
                if os.path.isfile(full):
                    out.append(f"{p}/{name} sha256={_hash_file(full)}")
        elif os.path.isfile(p):
            out.append(f"{p} sha256={_hash_file(p)}")
    return out


def _write_manifest(out_dir: str, command: str, config: trainer.TrainConfig,
                    inputs: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"command={command}", f"version={__version__}",
             f"timestamp={datetime.datetime.now(datetime.timezone.utc).isoformat()}"]
    lines += [f"config.{line}" for line in trainer.config_to_text(config).splitlines()]
    lines += _hash_inputs(inputs)
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _resolve_seed(args, config: trainer.TrainConfig) -> trainer.TrainConfig:
    seed = getattr(args, "seed", None)
    if seed is None and os.environ.get("LUMOS_SEED"):
        seed = int(os.environ["LUMOS_SEED"])
    if seed is not None and seed != config.seed:
        config = trainer.config_from_mapping({"seed": str(seed)}, base=config)
    return config


def _load_config(path: str | None) -> trainer.TrainConfig:
    if path is None:
        return trainer.TrainConfig()
    return trainer.parse_config_file(path)


def _load_dataset(root: str) -> dict[str, lfdata.LightField]:
    scenes = {}
    for name in sorted(os.listdir(root)):
        full = os.path.join(root, name)
        if os.path.isdir(full):
            scenes[name] = lfdata.load_light_field(full)
    if not scenes:
        # a bare scene directory also works
        scenes[os.path.basename(os.path.normpath(root))] = lfdata.load_light_field(root)
    return scenes


def cmd_render_gt(args) -> int:
    config = _resolve_seed(args, _load_config(args.config))
    lf = lfdata.load_light_field(args.scene)
    cfg = config.optical_config()
    spec = config.stack_spec(lf.angular_resolution)
    stack = display.ground_truth_stack(lf, cfg, spec, jobs=args.jobs)
    cfg_hash = hashlib.sha256(trainer.config_to_text(config).encode()).hexdigest()[:16]
    lfdata.save_focal_stack(args.out, stack.slices, list(spec.psi_values),
                            extra_meta={"config_hash": cfg_hash})
    _write_manifest(args.out, "render-gt", config, [args.scene] + ([args.config] if args.config else []))
    print(f"wrote {spec.m} slices to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_seed(args, _load_config(args.config))
    scenes = _load_dataset(args.dataset)
    ids = sorted(scenes)
    if args.train_count:
        split = lfdata.split_dataset(ids, args.train_count, config.seed)
        train_ids = list(split.train_scenes)
    else:
        train_ids = ids
    resume = trainer.load_checkpoint(args.resume) if args.resume else None
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "train", config,
                    [args.dataset] + ([args.config] if args.config else []))

    def progress(epoch, loss):
        if (epoch + 1) % max(1, config.epochs // 20) == 0 or epoch == 0:
            print(f"epoch {epoch + 1}/{config.epochs} loss {loss:.6f}")

    trainer.train(config, train_ids, scenes, out_dir=args.out, resume=resume,
                  progress=progress if not args.quiet else None)
    print(f"checkpoint written to {os.path.join(args.out, 'checkpoint.bin')}")
    return 0


def cmd_eval(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    scenes = _load_dataset(args.dataset)
    ids = sorted(scenes)
    if args.test_count:
        split = lfdata.split_dataset(ids, len(ids) - args.test_count, ckpt.config.seed)
        ids = list(split.test_scenes)
    report = trainer.evaluate(ckpt, ids, scenes, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w") as f:
        f.write(report.to_text())
    with open(os.path.join(args.out, "report.csv"), "w") as f:
        f.write(report.to_csv())
    _write_manifest(args.out, "eval", ckpt.config, [args.ckpt, args.dataset])
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    base = _resolve_seed(args, _load_config(args.config))
    scenes = _load_dataset(args.dataset)
    ids = sorted(scenes)
    deltas = []
    with open(args.grid) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            overrides = dict(p.split("=", 1) for p in parts[1:])
            deltas.append((parts[0], overrides))
    os.makedirs(args.out, exist_ok=True)
    report, summary = trainer.ablate(deltas, base, ids, ids, scenes, out_dir=args.out)
    with open(os.path.join(args.out, "ablation.txt"), "w") as f:
        f.write(summary)
    with open(os.path.join(args.out, "ablation.csv"), "w") as f:
        f.write(report.to_csv())
    _write_manifest(args.out, "ablate", base, [args.grid, args.dataset])
    print(summary, end="")
    return 0


def cmd_gradcheck(args) -> int:
    from . import autodiff as ad
    from .display import ApertureBank, FocalStackSpec
    from .encoder import EncoderConfig, init_weights

    size = args.size
    seed = args.seed if args.seed is not None else int(os.environ.get("LUMOS_SEED", "0"))
    rng = np.random.default_rng(seed)
    n, k, l, m = 2, 2, 3, 2
    cfg = optics.OpticalConfig(pupil_grid_size=16, aperture_samples=12,
                               aperture_resolution=l)
    spec = FocalStackSpec(psi_values=(-0.75, 0.75))
    views = [np.clip(rng.random((size, size, 3)), 0, 1) for _ in range(n)]
    gt = [np.clip(rng.random((size, size, 3)), 0, 1) for _ in range(m)]
    wmaps = metrics.weight_maps(gt, beta=2.0)
    ecfg = EncoderConfig(n=n, k=k, channels=4, blocks=1)
    ew = init_weights(ecfg, seed=seed)
    bank = ApertureBank(k=k, resolution=l, mode="continuous",
                        logits=rng.standard_normal((k, l, l)) * 0.5)
    point = dict(ew.arrays)
    point["aperture_logits"] = bank.logits.copy()

    def build(vals):
        logits = vals["aperture_logits"]
        encw = {key: vals[key] for key in ew.arrays}
        slices = display.ctdm_graph(views, encw, ecfg, bank, logits, cfg, spec)
        total = None
        for j, sl in enumerate(slices):
            term = ad.sum_reduce(ad.const_mul(ad.l1_diff(sl, ad.Value(gt[j])),
                                              wmaps.maps[j][:, :, None]))
            total = term if total is None else ad.add(total, term)
        return ad.scale(total, 1.0 / (m * size * size * 3))

    err = ad.grad_check(build, point, step=1e-5, max_coords=100000, seed=seed)
    print(f"max relative gradient error: {err:.6e}")
    if err > 1e-3:
        print("FAIL: exceeds 1e-3", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_export_apertures(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    config = ckpt.config
    bank = display.ApertureBank(k=config.k, resolution=config.l,
                                mode=config.aperture_mode,
                                temperature=config.temperature,
                                symmetry=config.symmetry, logits=ckpt.logits)
    maps = display.effective_apertures(bank)
    os.makedirs(args.out, exist_ok=True)
    for i, m in enumerate(maps):
        optics.save_aperture(os.path.join(args.out, f"aperture_{i}.csv"),
                             os.path.join(args.out, f"aperture_{i}.png"), m)
    _write_manifest(args.out, "export-apertures", config, [args.ckpt])
    print(f"wrote {len(maps)} apertures to {args.out}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="lumos", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    rg = sub.add_parser("render-gt", help="render the ground-truth focal stack of a scene")
    rg.add_argument("--scene", required=True)
    rg.add_argument("--config")
    rg.add_argument("--out", required=True)
    rg.add_argument("--seed", type=int)
    rg.add_argument("--jobs", type=int, default=1)
    rg.set_defaults(func=cmd_render_gt)

    tr = sub.add_parser("train", help="optimize encoder weights and aperture logits")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--config")
    tr.add_argument("--out", required=True)
    tr.add_argument("--resume")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--train-count", type=int, default=0)
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on held-out scenes")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--test-count", type=int, default=0)
    ev.add_argument("--jobs", type=int, default=1)
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and compare config variants")
    ab.add_argument("--grid", required=True)
    ab.add_argument("--config")
    ab.add_argument("--dataset", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int)
    ab.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    gc.add_argument("--size", type=int, default=8)
    gc.add_argument("--seed", type=int)
    gc.set_defaults(func=cmd_gradcheck)

    ex = sub.add_parser("export-apertures", help="dump a checkpoint's apertures as CSV + PNG")
    ex.add_argument("--ckpt", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_apertures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except LumosError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
