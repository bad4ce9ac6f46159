"""Synthetic LR generation: blur, downsample, additive Gaussian noise.

``degrade`` computes ``(hr * kernel) downsampled by d + noise``, in that order.
Kernels are Gaussian, motion (a rasterized line segment) or a composition of
both.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np
from scipy.signal import convolve2d as _full_convolve

from .errors import KernelOverflowError, ParameterError, ShapeError
from .imaging import UNIT, Image, bicubic_resample

KERNEL_KINDS = ("delta", "gaussian", "motion", "composite")
DOWNSAMPLE_MODES = ("bicubic", "stride")

Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class BlurKernel:
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ParameterError(f"kernel must be square with odd size, got {w.shape}")
        if np.any(w < 0):
            raise ParameterError("kernel weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError(f"kernel weights sum to {w.sum()}, expected 1")
        if self.kind not in KERNEL_KINDS:
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MotionVector:
    """Blur trajectory of length ``length`` pixels at ``angle`` radians.

    ``u`` and ``v`` are the Cartesian components (x to the right, y up).
    """

    length: float
    angle: float
    u: float = field(init=False)
    v: float = field(init=False)

    def __post_init__(self):
        if self.length < 0:
            raise ParameterError(f"motion length must be >= 0, got {self.length}")
        if not 0.0 <= self.angle < math.pi:
            raise ParameterError(f"motion angle must lie in [0, pi), got {self.angle}")
        object.__setattr__(self, "u", self.length * math.cos(self.angle))
        object.__setattr__(self, "v", self.length * math.sin(self.angle))


def delta_kernel(size: int = 1) -> BlurKernel:
    _check_size(size)
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return BlurKernel(w, "delta")


def _check_size(size):
    if not isinstance(size, (int, np.integer)) or size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {size}")


def gaussian_kernel(sigma: float, size: int) -> BlurKernel:
    _check_size(size)
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return BlurKernel(g / g.sum(), "gaussian")


def _clip_length(p0, p1, lo, hi):
    """Length of segment p0->p1 inside the axis-aligned box [lo, hi]
    (Liang-Barsky clipping)."""
    t0, t1 = 0.0, 1.0
    d = (p1[0] - p0[0], p1[1] - p0[1])
    for axis in (0, 1):
        if d[axis] == 0.0:
            if not lo[axis] <= p0[axis] <= hi[axis]:
                return 0.0
            continue
        ta = (lo[axis] - p0[axis]) / d[axis]
        tb = (hi[axis] - p0[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return 0.0
    return (t1 - t0) * math.hypot(*d)


def motion_kernel(mv: MotionVector, size: int) -> BlurKernel:
    """Rasterize the centered segment ``(-u/2, -v/2) -> (u/2, v/2)``.

    Each cell gets the exact length of segment passing through its unit
    square, so the kernel is antialiased and symmetric under transposition.
    """
    _check_size(size)
    if mv.length > size:
        raise KernelOverflowError(f"motion length {mv.length} exceeds kernel size {size}")
    if mv.length == 0:
        return BlurKernel(delta_kernel(size).weights, "motion")
    # (row, col) coordinates; rows grow downward so y-up maps to -row
    p0 = (mv.v / 2.0, -mv.u / 2.0)
    p1 = (-mv.v / 2.0, mv.u / 2.0)
    half = size // 2
    w = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            cy, cx = i - half, j - half
            w[i, j] = _clip_length(p0, p1, (cy - 0.5, cx - 0.5), (cy + 0.5, cx + 0.5))
    return BlurKernel(w / w.sum(), "motion")


def compose_kernels(kernels: Sequence[BlurKernel]) -> BlurKernel:
    """Full 2-D convolution of several kernels; equivalent to blurring with
    each in turn (up to border handling)."""
    if not kernels:
        return delta_kernel(1)
    if len(kernels) == 1:
        return kernels[0]
    w = kernels[0].weights
    for k in kernels[1:]:
        w = _full_convolve(w, k.weights, mode="full")
    return BlurKernel(w / w.sum(), "composite")


def _pad_reflect(px, p):
    if px.ndim == 2:
        return np.pad(px, p, mode="reflect")
    return np.pad(px, ((p, p), (p, p), (0, 0)), mode="reflect")


def convolve2d(img: Image, kernel: BlurKernel) -> Image:
    """Same-size correlation with reflect padding:
    ``out[i, j] = sum_ab k[a, b] * x[i + a - r, j + b - r]``."""
    k = kernel.weights
    size = k.shape[0]
    if size > img.height or size > img.width:
        raise ShapeError(f"kernel {size}x{size} larger than image {img.height}x{img.width}")
    r = size // 2
    px = img.pixels
    padded = _pad_reflect(px, r)
    out = np.zeros_like(px)
    h, w = img.height, img.width
    for a in range(size):
        for b in range(size):
            if k[a, b] != 0.0:
                out += k[a, b] * padded[a : a + h, b : b + w]
    hi = 1.0 if img.value_range == UNIT else 255.0
    return img.with_pixels(np.clip(out, 0.0, hi))


def downsample(img: Image, d: int, mode: str = "bicubic") -> Image:
    if d < 1:
        raise ParameterError(f"downsampling factor must be >= 1, got {d}")
    if mode not in DOWNSAMPLE_MODES:
        raise ParameterError(f"unknown downsample mode {mode!r}")
    if img.height % d or img.width % d:
        raise ShapeError(f"image {img.height}x{img.width} not divisible by {d}")
    if d == 1:
        return img.with_pixels(img.pixels.copy())
    if mode == "stride":
        return img.with_pixels(img.pixels[::d, ::d].copy())
    return bicubic_resample(img, Fraction(1, d))


def add_noise(img: Image, sigma: float, seed: Seed) -> Image:
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.with_pixels(img.pixels.copy())
    rng = np.random.default_rng(seed)
    hi = 1.0 if img.value_range == UNIT else 255.0
    noisy = img.pixels + rng.normal(0.0, sigma * hi, size=img.pixels.shape)
    return img.with_pixels(np.clip(noisy, 0.0, hi))


@dataclass(frozen=True)
class KernelSpec:
    """Parameters for one blur component.

    kind ``gaussian`` uses ``sigma``/``size``; kind ``motion`` uses
    ``length``/``angle``. A ``size`` of 0 picks one automatically: 1 for
    delta, ``2 * ceil(3 sigma) + 1`` for Gaussian, and the smallest odd size
    that holds the trajectory for motion.
    """

    kind: str = "delta"
    sigma: float = 0.0
    size: int = 0
    length: float = 0.0
    angle: float = 0.0

    def build(self) -> BlurKernel:
        if self.kind == "delta":
            return delta_kernel(self.size or 1)
        if self.kind == "gaussian":
            if self.sigma <= 0:
                raise ParameterError(f"sigma must be positive, got {self.sigma}")
            return gaussian_kernel(self.sigma, self.size or 2 * math.ceil(3 * self.sigma) + 1)
        if self.kind == "motion":
            size = self.size or max(3, int(math.ceil(self.length)) | 1)
            return motion_kernel(MotionVector(self.length, self.angle), size)
        raise ParameterError(f"unknown kernel kind {self.kind!r}")


@dataclass(frozen=True)
class DegradationConfig:
    kernels: tuple = (KernelSpec(),)
    scale: int = 4
    noise_sigma: float = 0.0
    seed: int = 0
    downsample_mode: str = "bicubic"

    def __post_init__(self):
        if self.scale < 1:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.downsample_mode not in DOWNSAMPLE_MODES:
            raise ParameterError(f"unknown downsample mode {self.downsample_mode!r}")
        object.__setattr__(self, "kernels", tuple(self.kernels))

    def kernel(self) -> BlurKernel:
        return compose_kernels([k.build() for k in self.kernels])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernels"] = [asdict(k) for k in self.kernels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        d = dict(d)
        d["kernels"] = tuple(KernelSpec(**k) for k in d.get("kernels", ()))
        return cls(**d)


PRESETS = {
    "mini": dict(kernels=(KernelSpec("gaussian", sigma=1.2, size=9),), noise_sigma=0.01),
    "plus": dict(
        kernels=(
            KernelSpec("gaussian", sigma=2.0, size=13),
            KernelSpec("motion", length=3.0, angle=math.pi / 4),
        ),
        noise_sigma=0.03,
    ),
}


def preset(name: str, scale: int = 4, seed: int = 0) -> DegradationConfig:
    try:
        params = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown degradation preset {name!r}") from None
    return DegradationConfig(scale=scale, seed=seed, downsample_mode="bicubic", **params)


def degrade(hr: Image, cfg: DegradationConfig, noise_seed: Seed | None = None) -> Image:
    """Blur, downsample, then add noise.

    ``noise_seed`` overrides ``cfg.seed`` so that dataset builders can give
    each image its own reproducible noise stream.
    """
    if hr.height % cfg.scale or hr.width % cfg.scale:
        raise ShapeError(f"{hr.id or 'image'} {hr.height}x{hr.width} not divisible by {cfg.scale}")
    blurred = convolve2d(hr, cfg.kernel())
    lr = downsample(blurred, cfg.scale, cfg.downsample_mode)
    seed = cfg.seed if noise_seed is None else noise_seed
    return add_noise(lr, cfg.noise_sigma, seed)
