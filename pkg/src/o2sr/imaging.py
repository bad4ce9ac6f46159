"""Image container, PNG I/O, luminance conversion, bicubic resampling and
LR/HR dataset pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Union

import numpy as np
from PIL import Image as PILImage

from .errors import ContractError, FormatError, PairingError, ShapeError

UNIT = "unit"
EIGHT_BIT = "eight_bit"
_RANGE_MAX = {UNIT: 1.0, EIGHT_BIT: 255.0}

# BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

BICUBIC_A = -0.5

Factor = Union[int, float, Fraction]


@dataclass
class Image:
    """A grayscale (H, W) or RGB (H, W, 3) float64 pixel array.

    ``value_range`` is ``"unit"`` ([0, 1]) or ``"eight_bit"`` ([0, 255]).
    Everything in this package works in unit range; ``eight_bit`` exists
    for callers that hold raw 8-bit data.
    """

    pixels: np.ndarray
    value_range: str = UNIT
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] not in (1, 3)):
            raise ShapeError(f"image must be HxW or HxWx3, got shape {px.shape}")
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"image dims must be >= 1, got {px.shape}")
        if self.value_range not in _RANGE_MAX:
            raise FormatError(f"unknown value range {self.value_range!r}")
        if not np.all(np.isfinite(px)):
            raise ShapeError("image contains non-finite values")
        hi = _RANGE_MAX[self.value_range]
        if px.min() < 0.0 or px.max() > hi:
            raise ContractError(
                f"pixel values [{px.min()}, {px.max()}] outside {self.value_range} range [0, {hi}]"
            )
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> "Image":
        return Image(pixels, self.value_range, self.id)

    def to_unit(self) -> "Image":
        if self.value_range == UNIT:
            return self
        return Image(self.pixels / 255.0, UNIT, self.id)


def load_image(path) -> Image:
    """Read an 8/16-bit grayscale or 8-bit RGB PNG into a unit-range Image."""
    path = Path(path)
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            if pil.format != "PNG":
                raise FormatError(f"{path}: expected PNG, got {pil.format}")
            arr = np.array(pil)
    except FormatError:
        raise
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc

    if mode == "L":
        px = arr.astype(np.float64) / 255.0
    elif mode in ("I;16", "I;16B", "I;16L"):
        px = arr.astype(np.float64) / 65535.0
    elif mode == "I" and arr.min() >= 0 and arr.max() <= 65535:
        # some PNG decoders widen 16-bit grayscale to 32-bit ints
        px = arr.astype(np.float64) / 65535.0
    elif mode == "RGB":
        px = arr.astype(np.float64) / 255.0
    else:
        raise FormatError(f"{path}: unsupported PNG mode {mode!r}")
    return Image(px, UNIT, path.stem)


def save_image(img: Image, path, bit_depth: int = 8) -> None:
    """Quantize and write ``img`` as PNG. RGB supports only 8 bits."""
    if bit_depth not in (8, 16):
        raise FormatError(f"bit depth must be 8 or 16, got {bit_depth}")
    px = img.to_unit().pixels
    if bit_depth == 16:
        if px.ndim == 3:
            raise FormatError("16-bit output is grayscale only")
        q = np.rint(px * 65535.0).astype(np.uint16)
    else:
        q = np.rint(px * 255.0).astype(np.uint8)
    path = Path(path)
    if not path.parent.is_dir():
        raise OSError(f"parent directory does not exist: {path.parent}")
    PILImage.fromarray(q).save(path, format="PNG")


def to_luminance(img: Image) -> Image:
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {img.channels}")
    return img.with_pixels(img.pixels @ LUMA_WEIGHTS)


def reflect_index(idx, n: int):
    """Map arbitrary integer indices into [0, n) by mirror reflection
    without repeating the edge sample (numpy ``reflect`` semantics)."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def cubic(x, a: float = BICUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _as_fraction(factor: Factor) -> Fraction:
    if isinstance(factor, float):
        return Fraction(factor).limit_denominator(1_000_000)
    return Fraction(factor)


def _resize_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    # Kernel is stretched by 1/scale when shrinking (antialiasing); weights are
    # renormalized per row so constants are preserved exactly.
    support = 2.0 if scale >= 1.0 else 2.0 / scale
    stretch = 1.0 if scale >= 1.0 else scale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        lo = math.floor(center - support)
        taps = np.arange(lo, math.ceil(center + support) + 1)
        w = cubic((center - taps) * stretch)
        w /= w.sum()
        np.add.at(mat[i], reflect_index(taps, n_in), w)
    return mat


def bicubic_resample(img: Image, factor: Factor) -> Image:
    """Resize by ``factor`` with the a=-0.5 cubic kernel and reflect borders.

    Output size is ``floor(dim * factor)``. Downscaling widens the kernel by
    ``1/factor``, matching the usual antialiased imresize behaviour.
    """
    f = _as_fraction(factor)
    if f <= 0:
        raise ShapeError(f"resample factor must be positive, got {factor}")
    h_out = math.floor(img.height * f)
    w_out = math.floor(img.width * f)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"resampling {img.height}x{img.width} by {factor} gives an empty image")
    if f == 1:
        return img.with_pixels(img.pixels.copy())
    scale = float(f)
    rows = _resize_matrix(img.height, h_out, scale)
    cols = _resize_matrix(img.width, w_out, scale)
    px = img.to_unit().pixels
    if px.ndim == 2:
        out = rows @ px @ cols.T
    else:
        out = np.einsum("ih,hwc,jw->ijc", rows, px, cols)
    # a=-0.5 overshoots near edges
    return Image(np.clip(out, 0.0, 1.0), UNIT, img.id)


@dataclass
class ImagePair:
    lr: Image
    hr: Image
    scale: int

    @property
    def id(self) -> str:
        return self.hr.id


@dataclass
class PairedDataset:
    """LR/HR pairs matched by filename stem, sorted lexicographically."""

    pairs: list
    lr_root: Path
    hr_root: Path
    scale: int
    stems: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[ImagePair]:
        return iter(self.pairs)

    def __getitem__(self, i) -> ImagePair:
        return self.pairs[i]


def _png_stems(directory: Path) -> dict:
    if not directory.is_dir():
        raise OSError(f"not a directory: {directory}")
    return {p.stem: p for p in directory.glob("*.png")}


def build_paired_dataset(lr_dir, hr_dir, scale: int) -> PairedDataset:
    lr_dir, hr_dir = Path(lr_dir), Path(hr_dir)
    if scale < 1:
        raise ContractError(f"scale must be a positive integer, got {scale}")
    lr_files = _png_stems(lr_dir)
    hr_files = _png_stems(hr_dir)
    for stem in sorted(set(lr_files) ^ set(hr_files)):
        side = "HR" if stem in lr_files else "LR"
        raise PairingError(stem, f"{stem!r} has no {side} counterpart")

    pairs = []
    stems = sorted(lr_files)
    for stem in stems:
        lr = load_image(lr_files[stem])
        hr = load_image(hr_files[stem])
        if hr.height != lr.height * scale or hr.width != lr.width * scale:
            raise ContractError(
                f"{stem}: LR {lr.height}x{lr.width} x{scale} != HR {hr.height}x{hr.width}"
            )
        pairs.append(ImagePair(lr, hr, scale))
    return PairedDataset(pairs, lr_dir, hr_dir, scale, stems)


def dataset_dirs(root, scale: int):
    """Paths of the ``hr`` and ``lr_x<d>`` subdirectories under ``root``."""
    root = Path(root)
    return root / f"lr_x{scale}", root / "hr"


def load_dataset_root(root, scale: int) -> PairedDataset:
    lr_dir, hr_dir = dataset_dirs(root, scale)
    return build_paired_dataset(lr_dir, hr_dir, scale)
