import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from o2sr.errors import ShapeError
from o2sr.imaging import Image, save_image
from o2sr.metrics import (
    MetricRecord,
    MetricReport,
    crop_border,
    evaluate_pairs,
    psnr,
    read_csv,
    ssim,
)

unit = st.floats(0, 1, allow_nan=False)
images = arrays(np.float64, (12, 13), elements=unit)


def ssim_loop(a, b, peak=1.0):
    """Per-window SSIM with explicit Gaussian weights, averaged."""
    r = np.arange(11) - 5
    g1 = np.exp(-(r ** 2) / (2 * 1.5 ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPSNR:
    def test_identical_sentinel(self):
        a = np.random.default_rng(0).random((5, 5))
        assert psnr(a, a) == math.inf

    def test_closed_form(self):
        a = np.full((8, 8), 0.5)
        assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-3)
        assert psnr(a, a + 1 / 255) == pytest.approx(48.1308, abs=1e-3)

    @given(images, images)
    @settings(max_examples=40, deadline=None)
    def test_symmetry_and_reference(self, a, b):
        assert psnr(a, b) == psnr(b, a)
        ref = oracles.psnr(a, b)
        assert psnr(a, b) == ref or abs(psnr(a, b) - ref) <= 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSSIM:
    @given(images)
    @settings(max_examples=30, deadline=None)
    def test_self_is_one(self, a):
        assert abs(ssim(a, a) - 1.0) <= 1e-9

    @given(images, images)
    @settings(max_examples=30, deadline=None)
    def test_symmetry(self, a, b):
        assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12

    def test_loop_reference(self):
        rng = np.random.default_rng(3)
        a = rng.random((16, 14))
        b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-10)

    def test_constants_luminance_only(self):
        a, b = np.full((11, 11), 0.2), np.full((11, 11), 0.7)
        c1 = 0.01 ** 2
        expected = (2 * 0.2 * 0.7 + c1) / (0.2 ** 2 + 0.7 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((10, 12)), np.zeros((10, 12)))

    def test_rgb_rejected(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((12, 12, 3)), np.zeros((12, 12, 3)))


class TestCrop:
    def test_crop(self):
        img = Image(np.random.default_rng(0).random((10, 12)))
        assert crop_border(img, 2).shape == (6, 8)
        assert crop_border(img, 0) is img
        with pytest.raises(ShapeError):
            crop_border(img, 5)


class TestReport:
    def test_aggregate_is_mean_of_rows(self, tmp_path):
        rng = np.random.default_rng(4)
        recs = [MetricRecord(f"im{i}", float(rng.uniform(20, 40)), float(rng.uniform(0, 1)))
                for i in range(7)]
        MetricReport(recs, 4, 4).write_csv(tmp_path / "m.csv")
        rows, (agg_p, agg_s) = read_csv(tmp_path / "m.csv")
        assert rows == recs
        assert abs(agg_p - np.mean([r.psnr_db for r in rows])) <= 1e-9
        assert abs(agg_s - np.mean([r.ssim for r in rows])) <= 1e-9
        assert (tmp_path / "m.manifest.json").exists()

    def test_single_record(self):
        rep = MetricReport([MetricRecord("a", 31.5, 0.9)], 2, 2)
        assert rep.mean_psnr == 31.5 and rep.mean_ssim == 0.9

    def test_inf_excluded_from_mean(self):
        rep = MetricReport([MetricRecord("a", math.inf, 1.0), MetricRecord("b", 30.0, 0.5)], 2, 2)
        assert rep.mean_psnr == 30.0

    def test_inf_written_as_sentinel(self, tmp_path):
        MetricReport([MetricRecord("a", math.inf, 1.0)], 2, 2).write_csv(tmp_path / "m.csv")
        text = (tmp_path / "m.csv").read_text()
        assert "a,inf,1.0" in text and "AGGREGATE,inf,1.0" in text


class TestEvaluatePairs:
    def _corpus(self, root, n=3, size=24):
        (root / "hr").mkdir()
        rng = np.random.default_rng(0)
        for i in range(n):
            save_image(Image(rng.random((size, size))), root / "hr" / f"s{i}.png")
        return root / "hr"

    def test_identity_corpus(self, tmp_path):
        hr = self._corpus(tmp_path)
        rep = evaluate_pairs(hr, hr, 4)
        assert len(rep.records) == 3
        assert all(r.psnr_db == math.inf and abs(r.ssim - 1) <= 1e-9 for r in rep.records)

    def test_bicubic_baseline_finite(self, tmp_path):
        from o2sr.imaging import bicubic_resample, load_image

        hr = self._corpus(tmp_path)
        (tmp_path / "sr").mkdir()
        for p in hr.glob("*.png"):
            img = load_image(p)
            save_image(bicubic_resample(bicubic_resample(img, 0.25), 4), tmp_path / "sr" / p.name)
        rep = evaluate_pairs(tmp_path / "sr", hr, 4, workers=2)
        assert math.isfinite(rep.mean_psnr)
        assert 0 < rep.mean_ssim <= 1

    def test_missing_and_bad_files_are_failures(self, tmp_path):
        hr = self._corpus(tmp_path)
        (tmp_path / "sr").mkdir()
        save_image(Image(np.zeros((24, 24))), tmp_path / "sr" / "s0.png")
        save_image(Image(np.zeros((20, 20))), tmp_path / "sr" / "s1.png")
        rep = evaluate_pairs(tmp_path / "sr", hr, 4)
        assert [r.image_id for r in rep.records] == ["s0"]
        assert [f["image_id"] for f in rep.failures] == ["s1", "s2"]
