"""PSNR / SSIM on the luminance channel and corpus-level reports."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .imaging import Image, load_image, to_luminance

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

INF_SENTINEL = "inf"
CSV_HEADER = ("image_id", "psnr_db", "ssim")


def _pixels(x) -> np.ndarray:
    if isinstance(x, Image):
        return x.to_unit().pixels
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the inputs match."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"psnr: shape mismatch {pa.shape} vs {pb.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable correlation, 'valid' region only
    n = g.size
    rows = np.lib.stride_tricks.sliding_window_view(x, n, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ g


def ssim_map(a, b, peak: float = 1.0) -> np.ndarray:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"ssim: shape mismatch {pa.shape} vs {pb.shape}")
    if pa.ndim != 2:
        raise ShapeError("ssim expects single-channel images; convert to luminance first")
    if min(pa.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {pa.shape}")
    g = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(pa, g)
    mu_b = _filter_valid(pb, g)
    var_a = _filter_valid(pa * pa, g) - mu_a * mu_a
    var_b = _filter_valid(pb * pb, g) - mu_b * mu_b
    cov = _filter_valid(pa * pb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    return float(ssim_map(a, b, peak).mean())


def crop_border(img: Image, c: int) -> Image:
    if c == 0:
        return img
    if 2 * c >= min(img.height, img.width):
        raise ShapeError(f"border crop {c} leaves nothing of {img.height}x{img.width}")
    return img.with_pixels(img.pixels[c:-c, c:-c])


@dataclass
class MetricRecord:
    image_id: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    records: list
    scale: int
    border_crop: int
    failures: list = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        """Mean over finite PSNR values; ``inf`` when every record is a perfect match."""
        finite = [r.psnr_db for r in self.records if math.isfinite(r.psnr_db)]
        if finite:
            return math.fsum(finite) / len(finite)
        return math.inf if self.records else math.nan

    @property
    def mean_ssim(self) -> float:
        if not self.records:
            return math.nan
        return math.fsum(r.ssim for r in self.records) / len(self.records)

    def config(self) -> dict:
        return {
            "scale": self.scale,
            "border_crop": self.border_crop,
            "luminance": "BT.601",
            "ssim": {"window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "k1": SSIM_K1, "k2": SSIM_K2},
            "peak": 1.0,
        }

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.records:
                w.writerow([r.image_id, format_value(r.psnr_db), format_value(r.ssim)])
            w.writerow(["AGGREGATE", format_value(self.mean_psnr), format_value(self.mean_ssim)])
        manifest = {"config": self.config(), "failures": self.failures, "csv": path.name}
        path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def format_value(v: float) -> str:
    if math.isinf(v) and v > 0:
        return INF_SENTINEL
    return repr(float(v))


def parse_value(s: str) -> float:
    return math.inf if s == INF_SENTINEL else float(s)


def read_csv(path):
    """Return (records, aggregate_row) from a metrics CSV."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: not a metrics CSV")
    records = [MetricRecord(r[0], parse_value(r[1]), parse_value(r[2])) for r in rows[1:-1]]
    agg = rows[-1]
    return records, (parse_value(agg[1]), parse_value(agg[2]))


def evaluate_images(sr: Image, hr: Image, border_crop: int) -> MetricRecord:
    a = crop_border(to_luminance(sr.to_unit()), border_crop)
    b = crop_border(to_luminance(hr.to_unit()), border_crop)
    if a.shape != b.shape:
        raise ShapeError(f"{hr.id}: SR {sr.shape} and HR {hr.shape} differ")
    return MetricRecord(hr.id, psnr(a, b), ssim(a, b))


def evaluate_pairs(sr_dir, hr_dir, scale: int, border_crop: int | None = None,
                   csv_path=None, workers: int = 1) -> MetricReport:
    """Score every HR image against the SR image with the same stem.

    Per-file problems are recorded in ``report.failures`` and do not stop
    the run.
    """
    border_crop = scale if border_crop is None else border_crop
    sr_files = {p.stem: p for p in Path(sr_dir).glob("*.png")}
    hr_files = {p.stem: p for p in Path(hr_dir).glob("*.png")}
    failures = []
    for stem in sorted(set(sr_files) ^ set(hr_files)):
        side = "HR" if stem in sr_files else "SR"
        failures.append({"image_id": stem, "error": f"missing {side} counterpart"})
    stems = sorted(set(sr_files) & set(hr_files))

    def score(stem):
        try:
            return evaluate_images(load_image(sr_files[stem]), load_image(hr_files[stem]), border_crop)
        except (OSError, ValueError) as exc:
            return {"image_id": stem, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(score, stems))
    records = [r for r in results if isinstance(r, MetricRecord)]
    failures += [r for r in results if isinstance(r, dict)]
    failures.sort(key=lambda f: f["image_id"])
    report = MetricReport(records, scale, border_crop, failures)
    if csv_path is not None:
        report.write_csv(csv_path)
    return report
