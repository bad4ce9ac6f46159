"""Gradient-domain inspection: magnitude heatmaps and HOG-style per-cell
dominant orientation maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imaging import UNIT, Image, save_image, to_luminance

N_BINS = 8
CELL = 8


def finite_differences(px: np.ndarray):
    """Forward differences; the last column/row gets zero gradient."""
    gx = np.zeros_like(px)
    gy = np.zeros_like(px)
    gx[:, :-1] = px[:, 1:] - px[:, :-1]
    gy[:-1, :] = px[1:, :] - px[:-1, :]
    return gx, gy


def gradient_magnitude(px: np.ndarray) -> np.ndarray:
    gx, gy = finite_differences(px)
    return np.hypot(gx, gy)


def orientation_bin(gx, gy, bins: int = N_BINS) -> np.ndarray:
    """Unsigned gradient angle in [0, pi) quantized to ``bins`` bins.
    Bin 0 holds purely horizontal gradients (vertical edges)."""
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    return np.minimum((angle / (np.pi / bins)).astype(np.int64), bins - 1)


def cell_histograms(px: np.ndarray, cell: int = CELL, bins: int = N_BINS) -> np.ndarray:
    """Magnitude-weighted orientation histograms, shape (cells_y, cells_x, bins).
    Partial cells at the right/bottom border are kept."""
    gx, gy = finite_differences(px)
    mag = np.hypot(gx, gy)
    b = orientation_bin(gx, gy, bins)
    h, w = px.shape
    ny, nx = -(-h // cell), -(-w // cell)
    hist = np.zeros((ny, nx, bins))
    cy = np.arange(h)[:, None] // cell
    cx = np.arange(w)[None, :] // cell
    np.add.at(hist, (np.broadcast_to(cy, px.shape), np.broadcast_to(cx, px.shape), b), mag)
    return hist


def dominant_orientation(px: np.ndarray, cell: int = CELL, bins: int = N_BINS) -> np.ndarray:
    """Per-cell argmax bin, or -1 for cells without any gradient."""
    hist = cell_histograms(px, cell, bins)
    dom = hist.argmax(axis=-1)
    dom[hist.sum(axis=-1) == 0] = -1
    return dom


def magnitude_image(px: np.ndarray) -> Image:
    mag = gradient_magnitude(px)
    peak = mag.max()
    return Image(mag / peak if peak > 0 else mag, UNIT)


def orientation_image(px: np.ndarray, cell: int = CELL, bins: int = N_BINS) -> Image:
    """Cells painted with gray level (bin + 1) / bins; empty cells are black."""
    dom = dominant_orientation(px, cell, bins)
    level = np.where(dom < 0, 0.0, (dom + 1) / bins)
    full = np.kron(level, np.ones((cell, cell)))
    return Image(full[: px.shape[0], : px.shape[1]], UNIT)


def write_gradient_maps(img: Image, out_dir, cell: int = CELL, bins: int = N_BINS):
    px = to_luminance(img.to_unit()).pixels
    out = Path(out_dir)
    mag_path = out / f"{img.id}_gradmag.png"
    ori_path = out / f"{img.id}_orient.png"
    save_image(magnitude_image(px), mag_path)
    save_image(orientation_image(px, cell, bins), ori_path)
    return mag_path, ori_path
