"""Run configuration files: ``section.key = value`` lines with ``#`` comments.

Sections are ``model``, ``train``, ``degrade`` and ``eval``. Only keys that
appear in the file are stored; everything else resolves to presets and
defaults at use time, so parse -> serialize round-trips exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import kv
from .degradation import PRESETS as DEGRADE_PRESETS
from .degradation import DegradationConfig, KernelSpec
from .errors import ConfigurationError
from .model import ModelConfig
from .training import MODEL_PRESETS, TRAIN_PRESETS, TrainConfig

KERNEL_CHOICES = ("delta", "gaussian", "motion", "gaussian+motion")


@dataclass(frozen=True)
class DegradeSettings:
    """Flat, file-friendly view of a ``DegradationConfig``."""

    kernel: str = "delta"
    sigma: float = 1.2
    size: int = 9
    motion_length: float = 0.0
    motion_angle: float = 0.0
    motion_size: int = 0
    scale: int = 4
    noise_sigma: float = 0.0
    seed: int = 0
    downsample_mode: str = "bicubic"
    bit_depth: int = 8

    def to_config(self) -> DegradationConfig:
        if self.kernel not in KERNEL_CHOICES:
            raise ConfigurationError(f"degrade.kernel must be one of {KERNEL_CHOICES}, got {self.kernel!r}")
        if self.bit_depth not in (8, 16):
            raise ConfigurationError("degrade.bit_depth must be 8 or 16")
        specs = []
        if "gaussian" in self.kernel:
            specs.append(KernelSpec("gaussian", sigma=self.sigma, size=self.size))
        if "motion" in self.kernel:
            specs.append(KernelSpec("motion", length=self.motion_length, angle=self.motion_angle,
                                    size=self.motion_size))
        if not specs:
            specs.append(KernelSpec("delta", size=1))
        try:
            return DegradationConfig(tuple(specs), self.scale, self.noise_sigma, self.seed,
                                     self.downsample_mode)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None


def degrade_preset_settings(name: str) -> dict:
    """Field overrides of ``DegradeSettings`` that reproduce a named preset."""
    if name not in DEGRADE_PRESETS:
        raise ConfigurationError(f"unknown degradation preset {name!r}")
    p = DEGRADE_PRESETS[name]
    out = {"noise_sigma": p["noise_sigma"], "downsample_mode": "bicubic"}
    kinds = []
    for k in p["kernels"]:
        kinds.append(k.kind)
        if k.kind == "gaussian":
            out.update(sigma=k.sigma, size=k.size)
        elif k.kind == "motion":
            out.update(motion_length=k.length, motion_angle=k.angle, motion_size=k.size)
    out["kernel"] = "+".join(kinds)
    return out


@dataclass(frozen=True)
class EvalSettings:
    scale: int = 4
    border_crop: int = -1  # -1 means "use scale"

    def crop(self) -> int:
        return self.scale if self.border_crop < 0 else self.border_crop


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "degrade": DegradeSettings,
    "eval": EvalSettings,
}


def schema() -> dict:
    """All valid keys mapped to their default values."""
    out = {}
    for section, cls in SECTIONS.items():
        for name, default in kv.field_defaults(cls).items():
            out[f"{section}.{name}"] = default
    return out


class RunConfig:
    """Explicit key/value settings loaded from a config file."""

    def __init__(self, items: dict | None = None):
        self.items = {}
        for key, value in (items or {}).items():
            self.set(key, value)

    def set(self, key: str, value) -> None:
        valid = schema()
        if key not in valid:
            raise ConfigurationError(f"unknown config key {key!r}")
        text = value if isinstance(value, str) else kv.encode_value(value)
        # normalize through the typed codec so serialization is canonical
        self.items[key] = kv.encode_value(kv.decode_value(text, valid[key], key))

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls(kv.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text)

    def dumps(self) -> str:
        order = list(schema())
        return kv.dumps({k: self.items[k] for k in sorted(self.items, key=order.index)})

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.items == other.items

    def section(self, name: str) -> dict:
        return {k: v for k, v in self.items.items() if k.startswith(name + ".")}

    def _resolve(self, cls, section: str, base: dict, overrides: dict):
        # precedence: defaults < preset (base) < file < explicit overrides
        try:
            cfg = kv.from_items(cls, self.section(section), section, cls(**base))
            changes = {k: v for k, v in overrides.items() if v is not None}
            return replace(cfg, **changes) if changes else cfg
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"{section}: {exc}") from None

    def model_config(self, preset: str | None = None, **overrides) -> ModelConfig:
        base = {}
        if preset:
            if preset not in MODEL_PRESETS:
                raise ConfigurationError(f"unknown model preset {preset!r}")
            base.update(MODEL_PRESETS[preset])
        return self._resolve(ModelConfig, "model", base, overrides)

    def train_config(self, preset: str | None = None, **overrides) -> TrainConfig:
        base = {}
        if preset:
            if preset not in TRAIN_PRESETS:
                raise ConfigurationError(f"unknown training preset {preset!r}")
            base = asdict(TRAIN_PRESETS[preset])
        return self._resolve(TrainConfig, "train", base, overrides)

    def degrade_settings(self, preset: str | None = None, **overrides) -> DegradeSettings:
        base = degrade_preset_settings(preset) if preset else {}
        return self._resolve(DegradeSettings, "degrade", base, overrides)

    def eval_settings(self, **overrides) -> EvalSettings:
        return self._resolve(EvalSettings, "eval", {}, overrides)

    @classmethod
    def from_settings(cls, prefix: str, obj) -> "RunConfig":
        return cls(kv.to_items(obj, prefix))
