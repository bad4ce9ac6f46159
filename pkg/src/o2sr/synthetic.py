"""Radiograph-like grayscale phantoms for tests and demos.

Soft-tissue ellipse on a dark field, a few long bones with bright cortical
rims and trabecular texture, and a smooth exposure gradient.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .imaging import UNIT, Image, save_image


def _ellipse(yy, xx, cy, cx, ry, rx, angle):
    c, s = np.cos(angle), np.sin(angle)
    y, x = yy - cy, xx - cx
    u = (x * c + y * s) / rx
    v = (-x * s + y * c) / ry
    return u * u + v * v


def _soft_step(signed_dist, width):
    # edge blurred over roughly ``width`` pixels
    return 0.5 * (1.0 + np.tanh(signed_dist / max(width, 1e-6)))


def phantom(size: int = 96, seed: int = 0, n_bones: int = 2, texture=(0.15, 0.35),
            edge_width: float = 0.4) -> Image:
    """One synthetic radiograph.

    Bones are filled ellipses with a cortical shell a few pixels thick and
    sharp boundaries; ``texture`` bounds the angular frequency (radians per
    pixel) of the trabecular pattern inside the marrow.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = 0.08 + 0.05 * (xx / size) + 0.03 * (yy / size)

    tissue = _ellipse(yy, xx, size / 2, size / 2, size * 0.45, size * 0.32, rng.uniform(-0.3, 0.3))
    radius = size * 0.3
    img += 0.2 * _soft_step((1.0 - np.sqrt(tissue)) * radius, edge_width)

    for _ in range(n_bones):
        cy, cx = rng.uniform(0.3, 0.7, size=2) * size
        ry, rx = size * rng.uniform(0.3, 0.45), size * rng.uniform(0.08, 0.13)
        ang = rng.uniform(-0.6, 0.6)
        rho = np.sqrt(_ellipse(yy, xx, cy, cx, ry, rx, ang))
        # signed distance to the outer boundary, measured along the minor axis
        outer = _soft_step((1.0 - rho) * rx, edge_width)
        shell = rng.uniform(2.5, 4.0)
        inner = _soft_step((1.0 - rho) * rx - shell, edge_width)
        freq = rng.uniform(*texture)
        phase = rng.uniform(0, 2 * np.pi)
        trabecular = 0.5 + 0.5 * np.sin(freq * (xx * np.cos(ang) + yy * np.sin(ang)) + phase)
        img += 0.45 * (outer - inner) + inner * (0.15 + 0.1 * trabecular)

    img += rng.normal(0.0, 0.003, size=img.shape)
    return Image(np.clip(img, 0.0, 1.0), UNIT, f"phantom_{seed:04d}")


def write_phantoms(out_dir, count: int, size: int = 96, seed: int = 0, bit_depth: int = 8):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = phantom(size, seed + i)
        path = out / f"{img.id}.png"
        save_image(img, path, bit_depth)
        paths.append(path)
    return paths


def main(argv=None):
    ap = argparse.ArgumentParser(description="Write synthetic radiograph-like PNG phantoms.")
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=3)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for p in write_phantoms(args.out_dir, args.count, args.size, args.seed):
        print(p)


if __name__ == "__main__":
    main()
