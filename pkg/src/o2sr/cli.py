"""``o2sr`` command line: make-dataset, train, infer, eval, viz-grad.

Exit codes: 0 success, 2 configuration, 3 I/O or bad input files,
4 numerical divergence, 5 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig
from .degradation import degrade
from .errors import (
    ConfigurationError,
    DivergenceError,
    IncompatibilityError,
    O2SRError,
    ParameterError,
)
from .gradviz import write_gradient_maps
from .imaging import load_dataset_root, load_image, save_image
from .metrics import evaluate_pairs, format_value
from .model import super_resolve
from .training import fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5


def exit_code_for(exc: BaseException) -> int:
    # a corrupt or truncated checkpoint is an I/O failure, not an incompatibility
    if isinstance(exc, IncompatibilityError):
        return EXIT_CHECKPOINT
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGED
    if isinstance(exc, (ConfigurationError, ParameterError)):
        return EXIT_CONFIG
    return EXIT_IO


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("O2SR_NUM_THREADS", "1")))
    except ValueError:
        return 1


def _err(msg: str) -> None:
    print(f"o2sr: {msg}", file=sys.stderr)


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _png_inputs(path: Path):
    if path.is_dir():
        return sorted(path.glob("*.png"))
    if path.is_file():
        return [path]
    raise OSError(f"no such file or directory: {path}")


def noise_seed(seed: int, stem: str):
    """Per-image noise stream: independent of file enumeration order."""
    return [seed, zlib.crc32(stem.encode("utf-8"))]


def cmd_make_dataset(args) -> int:
    run = _load_config(args.config)
    settings = run.degrade_settings(args.preset, scale=args.scale, seed=args.seed)
    cfg = settings.to_config()
    files = _png_inputs(Path(args.hr_dir))
    if not files:
        raise OSError(f"no PNG files in {args.hr_dir}")
    out = Path(args.out)
    hr_out, lr_out = out / "hr", out / f"lr_x{cfg.scale}"
    hr_out.mkdir(parents=True, exist_ok=True)
    lr_out.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        try:
            hr = load_image(path)
            lr = degrade(hr, cfg, noise_seed=noise_seed(cfg.seed, hr.id))
            save_image(hr, hr_out / f"{hr.id}.png", settings.bit_depth)
            save_image(lr, lr_out / f"{hr.id}.png", settings.bit_depth)
            return None
        except (OSError, O2SRError) as exc:
            return {"file": path.name, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=num_workers()) as pool:
        results = list(pool.map(work, files))
    failures = [r for r in results if r]
    written = [p.stem for p, r in zip(files, results) if not r]

    manifest = {
        "o2sr_version": __version__,
        "degradation": cfg.to_dict(),
        "settings": asdict(settings),
        "seed": cfg.seed,
        "noise_seed_rule": "[seed, crc32(stem)]",
        "images": written,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "degrade.cfg").write_text(RunConfig.from_settings("degrade", settings).dumps())
    for f in failures:
        _err(f"{f['file']}: {f['error']}")
    print(f"wrote {len(written)} pairs to {out} ({len(failures)} failed)")
    return EXIT_IO if failures else EXIT_OK


def cmd_train(args) -> int:
    run = _load_config(args.config)
    model_cfg = run.model_config(args.preset, scale=args.scale, seed=args.seed)
    train_cfg = run.train_config(args.preset, seed=args.seed, max_steps=args.max_steps)
    ds = load_dataset_root(args.data, model_cfg.scale)
    if len(ds) == 0:
        raise OSError(f"no image pairs under {args.data}")
    val = list(ds)[:4] if train_cfg.val_every else None
    start = time.perf_counter()
    result = fit(ds, model_cfg, train_cfg, args.out, val_pairs=val, resume=not args.no_resume)
    elapsed = time.perf_counter() - start
    final = f"{result.losses[-1]:.6g}" if result.losses else "n/a"
    print(f"step {result.step}  final loss {final}  elapsed {elapsed:.1f}s")
    print(f"checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    if args.scale is not None and args.scale != ck.config.scale:
        raise ConfigurationError(f"--scale {args.scale} does not match checkpoint scale {ck.config.scale}")
    files = _png_inputs(Path(args.input))
    if not files:
        raise OSError(f"no PNG inputs in {args.input}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in files:
        try:
            img = load_image(path)
            if img.channels != 1:
                raise ValueError(f"expected a single-channel image, got {img.channels} channels")
            save_image(super_resolve(ck.model, img), out / f"{img.id}.png", args.bit_depth)
        except (OSError, ValueError) as exc:
            failures.append({"file": path.name, "error": str(exc)})
            _err(f"{path.name}: {exc}")
    manifest = {
        "o2sr_version": __version__,
        "checkpoint": str(args.checkpoint),
        "step": ck.step,
        "model": asdict(ck.config),
        "inputs": [p.name for p in files],
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files) - len(failures)} images to {out}")
    return EXIT_IO if failures else EXIT_OK


def cmd_eval(args) -> int:
    run = _load_config(args.config)
    settings = run.eval_settings(scale=args.scale, border_crop=args.border_crop)
    for d in (args.sr, args.hr):
        if not Path(d).is_dir():
            raise OSError(f"not a directory: {d}")
    report = evaluate_pairs(args.sr, args.hr, settings.scale, settings.crop(), workers=num_workers())
    for f in report.failures:
        _err(f"{f['image_id']}: {f['error']}")
    if not report.records:
        _err("no evaluable image pairs")
        return EXIT_IO
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out)
    print(f"AGGREGATE psnr_db={format_value(report.mean_psnr)} ssim={format_value(report.mean_ssim)} "
          f"n={len(report.records)}")
    return EXIT_OK


def cmd_viz_grad(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        img = load_image(path)
        for p in write_gradient_maps(img, out, args.cell, args.bins):
            print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="o2sr", description="Orientation-prior radiograph super-resolution.")
    parser.add_argument("--version", action="version", version=f"o2sr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="degrade HR images into a paired LR/HR dataset")
    p.add_argument("hr_dir", help="directory (or single file) of HR PNGs")
    p.add_argument("--out", required=True, help="output root; gets hr/ and lr_x<d>/")
    p.add_argument("--preset", choices=("mini", "plus"), help="named degradation preset")
    p.add_argument("--scale", type=int, choices=(2, 4), help="downsampling factor")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--config", help="run config file (degrade.* keys)")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train a model on a paired dataset")
    p.add_argument("--data", required=True, help="dataset root with hr/ and lr_x<d>/")
    p.add_argument("--out", required=True, help="directory for checkpoints and loss.log")
    p.add_argument("--preset", choices=("tiny", "paper"), help="model + training preset")
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--no-resume", action="store_true", help="ignore an existing latest checkpoint")
    p.add_argument("--config", help="run config file (model.*, train.* keys)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve an image or a directory of images")
    p.add_argument("input", help="LR PNG or directory of PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale", type=int, choices=(2, 4), help="assert the checkpoint scale")
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM on the luminance channel")
    p.add_argument("--sr", required=True, help="directory of SR PNGs")
    p.add_argument("--hr", required=True, help="directory of HR PNGs")
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--border-crop", type=int, help="pixels cropped from each edge (default: scale)")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--config", help="run config file (eval.* keys)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-grad", help="gradient magnitude and dominant-orientation maps")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--cell", type=int, default=8)
    p.add_argument("--bins", type=int, default=8)
    p.set_defaults(func=cmd_viz_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        if not isinstance(exc, (OSError, O2SRError, ValueError)):
            raise
        _err(str(exc))
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
