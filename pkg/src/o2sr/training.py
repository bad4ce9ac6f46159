"""Training loop: L1 + MSE objective, aligned patch sampling, Adam, and
resumable checkpointed runs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import kv
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .errors import ConfigurationError, DivergenceError, IncompatibilityError, SamplingError, ShapeError
from .imaging import Image, PairedDataset, to_luminance
from .metrics import crop_border, psnr
from .model import ModelConfig, O2Former, build_model, super_resolve

LATEST = "latest.o2ck"
LOSS_LOG = "loss.log"


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 16
    hr_patch: int = 48
    epochs: int = 0
    max_steps: int = -1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_every: int = 0
    checkpoint_every: int = 100
    log_every: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ConfigurationError("train.alpha and train.beta must be >= 0 and not both 0")
        if self.learning_rate < 0:
            raise ConfigurationError("train.learning_rate must be >= 0")
        if self.batch_size < 1 or self.hr_patch < 1:
            raise ConfigurationError("train.batch_size and train.hr_patch must be positive")
        if self.log_every < 1 or self.checkpoint_every < 1 or self.val_every < 0:
            raise ConfigurationError("train.log_every/checkpoint_every must be >= 1, val_every >= 0")

    def total_steps(self, n_images: int) -> int:
        if self.max_steps >= 0:
            return self.max_steps
        return self.epochs * math.ceil(n_images / self.batch_size)


# Fields that may change between an interrupted run and its resumption.
RESUMABLE_FIELDS = ("epochs", "max_steps", "val_every", "checkpoint_every", "log_every")

TRAIN_PRESETS = {
    "tiny": TrainConfig(learning_rate=1e-3, batch_size=16, hr_patch=48, max_steps=300,
                        checkpoint_every=100),
    "paper": TrainConfig(learning_rate=1e-5, batch_size=32, hr_patch=96, epochs=1000,
                         checkpoint_every=1000),
}

MODEL_PRESETS = {
    "tiny": dict(channels=16, n_blocks=2, n_heads=2, window_size=4),
    "paper": dict(channels=32, n_blocks=4, n_heads=4, window_size=8),
}


def model_preset(name: str, scale: int = 4, seed: int = 0) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ConfigurationError(f"unknown model preset {name!r}")
    return ModelConfig(scale=scale, seed=seed, **MODEL_PRESETS[name])


def loss(sr, hr, alpha: float = 1.0, beta: float = 0.1):
    """``alpha * mean|sr - hr| + beta * mean((sr - hr)^2)``.

    Tensors in, tensor out (differentiable); Images in, float out.
    """
    if isinstance(sr, Image) or isinstance(hr, Image):
        a = sr.pixels if isinstance(sr, Image) else np.asarray(sr)
        b = hr.pixels if isinstance(hr, Image) else np.asarray(hr)
        if a.shape != b.shape:
            raise ShapeError(f"loss: shape mismatch {a.shape} vs {b.shape}")
        diff = a - b
        return float(alpha * np.mean(np.abs(diff)) + beta * np.mean(diff * diff))
    if sr.shape != hr.shape:
        raise ShapeError(f"loss: shape mismatch {tuple(sr.shape)} vs {tuple(hr.shape)}")
    diff = sr - hr
    return alpha * diff.abs().mean() + beta * (diff * diff).mean()


@dataclass
class PatchBatch:
    lr: np.ndarray          # (B, 1, p, p)
    hr: np.ndarray          # (B, 1, p*d, p*d)
    indices: np.ndarray     # dataset index per patch
    lr_offsets: np.ndarray  # (B, 2) row, col
    hr_offsets: np.ndarray

    def tensors(self, dtype=torch.float32):
        return torch.as_tensor(self.lr, dtype=dtype), torch.as_tensor(self.hr, dtype=dtype)


def sample_patches(ds: PairedDataset, hr_patch: int, batch: int, seed: int, step: int) -> PatchBatch:
    """Aligned random crops; a pure function of ``(seed, step)``."""
    d = ds.scale
    if hr_patch % d:
        raise SamplingError(f"HR patch {hr_patch} not divisible by scale {d}")
    if len(ds) == 0:
        raise SamplingError("dataset is empty")
    p = hr_patch // d
    for pair in ds:
        if pair.hr.height < hr_patch or pair.hr.width < hr_patch:
            raise SamplingError(
                f"image {pair.id!r} ({pair.hr.height}x{pair.hr.width}) is smaller than patch {hr_patch}"
            )
    rng = np.random.default_rng([seed, step])
    idx = rng.integers(0, len(ds), size=batch)
    lr_out = np.empty((batch, 1, p, p))
    hr_out = np.empty((batch, 1, hr_patch, hr_patch))
    lr_off = np.empty((batch, 2), dtype=np.int64)
    for b, i in enumerate(idx):
        pair = ds[int(i)]
        lr_px = to_luminance(pair.lr).pixels
        hr_px = to_luminance(pair.hr).pixels
        r = rng.integers(0, lr_px.shape[0] - p + 1)
        c = rng.integers(0, lr_px.shape[1] - p + 1)
        lr_off[b] = (r, c)
        lr_out[b, 0] = lr_px[r : r + p, c : c + p]
        hr_out[b, 0] = hr_px[r * d : r * d + hr_patch, c * d : c * d + hr_patch]
    return PatchBatch(lr_out, hr_out, idx, lr_off, lr_off * d)


def make_optimizer(model: O2Former, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def train_step(model: O2Former, optimizer, batch: PatchBatch, cfg: TrainConfig, step: int = -1) -> float:
    """One Adam update on ``batch``; returns the pre-update loss."""
    dtype = next(model.parameters()).dtype
    lr, hr = batch.tensors(dtype)
    model.train()
    optimizer.zero_grad(set_to_none=True)
    value = loss(model(lr), hr, cfg.alpha, cfg.beta)
    if not torch.isfinite(value):
        raise DivergenceError(f"step {step}: non-finite loss {value.item()}")
    value.backward()
    bad = [n for n, p in model.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
    if bad:
        raise DivergenceError(f"step {step}: non-finite gradients in {', '.join(bad)}")
    optimizer.step()
    return value.item()


def validate(model: O2Former, pairs) -> float:
    """Mean luminance PSNR over ``pairs`` with a border crop of the model scale."""
    c = model.cfg.scale
    scores = []
    for pair in pairs:
        sr = super_resolve(model, to_luminance(pair.lr))
        hr = to_luminance(pair.hr)
        scores.append(psnr(crop_border(sr, c), crop_border(hr, c)))
    finite = [s for s in scores if math.isfinite(s)]
    return math.fsum(finite) / len(finite) if finite else math.inf


@dataclass
class FitResult:
    model: O2Former
    step: int
    losses: list
    checkpoint: Path


def _train_header(cfg: TrainConfig) -> dict:
    return kv.to_items(cfg, "train")


def _check_resume(saved: dict, cfg: TrainConfig, path):
    current = _train_header(cfg)
    for key, value in current.items():
        name = key.split(".", 1)[1]
        if name in RESUMABLE_FIELDS or key not in saved:
            continue
        if saved[key] != value:
            raise IncompatibilityError(
                f"{path}: {key} is {saved[key]} in checkpoint but {value} in the current config",
                field=key,
            )


def read_loss_log(path) -> list:
    """Parse a loss log into ``(step, loss, val_psnr or None)`` tuples."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        step, value, *rest = line.split("\t")
        val = float(rest[0]) if rest and rest[0] else None
        rows.append((int(step), float(value), val))
    return rows


def _truncate_log(path: Path, step: int):
    if not path.exists():
        return
    keep = [ln for ln in path.read_text(encoding="utf-8").splitlines(keepends=True)
            if ln.strip() and int(ln.split("\t", 1)[0]) <= step]
    path.write_text("".join(keep), encoding="utf-8")


def fit(ds: PairedDataset, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir,
        val_pairs=None, resume: bool = True, progress=None) -> FitResult:
    """Train, writing ``ckpt_<step>.o2ck``, ``latest.o2ck`` and ``loss.log``
    under ``out_dir``. An existing ``latest.o2ck`` is resumed from, and the
    continued loss sequence is bitwise identical to an uninterrupted run.
    """
    if ds.scale != model_cfg.scale:
        raise ConfigurationError(f"dataset scale {ds.scale} != model.scale {model_cfg.scale}")
    if train_cfg.hr_patch % model_cfg.scale:
        raise ConfigurationError(
            f"train.hr_patch {train_cfg.hr_patch} not divisible by model.scale {model_cfg.scale}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    latest = out / LATEST
    log_path = out / LOSS_LOG
    header = _train_header(train_cfg)

    def checkpoint(model, optimizer, step):
        path = out / f"ckpt_{step:07d}.o2ck"
        save_checkpoint(path, model, step, optimizer, header)
        save_checkpoint(latest, model, step, optimizer, header)
        return path

    if resume and latest.exists():
        ck = load_checkpoint(latest, expected=model_cfg)
        _check_resume(ck.header, train_cfg, latest)
        model, step = ck.model, ck.step
        optimizer = make_optimizer(model, train_cfg)
        restore_optimizer(optimizer, model, ck)
        _truncate_log(log_path, step)
        ck_path = latest
    else:
        model, step = build_model(model_cfg), 0
        optimizer = make_optimizer(model, train_cfg)
        log_path.write_text("", encoding="utf-8")
        ck_path = checkpoint(model, optimizer, 0)

    manifest = {
        "model": asdict(model_cfg),
        "train": asdict(train_cfg),
        "dataset": {"lr_root": str(ds.lr_root), "hr_root": str(ds.hr_root),
                    "scale": ds.scale, "stems": list(ds.stems)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    total = train_cfg.total_steps(len(ds))
    losses = []
    with log_path.open("a", encoding="utf-8") as log:
        while step < total:
            batch = sample_patches(ds, train_cfg.hr_patch, train_cfg.batch_size, train_cfg.seed, step)
            value = train_step(model, optimizer, batch, train_cfg, step)
            step += 1
            losses.append(value)
            val = ""
            if val_pairs is not None and train_cfg.val_every and step % train_cfg.val_every == 0:
                val = repr(validate(model, val_pairs))
            if step % train_cfg.log_every == 0:
                log.write(f"{step}\t{value!r}\t{val}\n")
                log.flush()
            if progress is not None:
                progress(step, value)
            if step % train_cfg.checkpoint_every == 0 or step == total:
                ck_path = checkpoint(model, optimizer, step)
    return FitResult(model, step, losses, ck_path)


def with_overrides(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
