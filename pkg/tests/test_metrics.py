import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehdr.errors import DataError, GeometryError, ShapeError
from wavehdr.hdr import BracketSample, mu_law_array
from wavehdr.metrics import EvalReport, evaluate_samples, mse_to_psnr, psnr, sample_metrics, ssim


def direct_ssim(x, y, L=1.0):
    """Per-window SSIM from the textbook formula, explicit loops."""
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5 ** 2))
    g = np.outer(g, g)
    g /= g.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for n in range(x.shape[0]):
        for c in range(x.shape[1]):
            for i in range(x.shape[2] - 10):
                for j in range(x.shape[3] - 10):
                    a = x[n, c, i:i + 11, j:j + 11]
                    b = y[n, c, i:i + 11, j:j + 11]
                    ma, mb = np.sum(g * a), np.sum(g * b)
                    va = np.sum(g * (a - ma) ** 2)
                    vb = np.sum(g * (b - mb) ** 2)
                    cov = np.sum(g * (a - ma) * (b - mb))
                    vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPSNR:
    def test_golden(self):
        assert mse_to_psnr(0.01, 1.0) == 20.0

    def test_near_golden_from_images(self):
        gt = np.zeros((1, 1, 4, 4))
        assert psnr(gt + 0.1, gt) == pytest.approx(20.0, abs=1e-12)

    def test_identical_capped(self):
        x = np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8))
        assert psnr(x, x) == 99.0

    def test_scalar_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (2, 1, 3, 5, 7))
        mse = 0.0
        for idx in np.ndindex(a.shape):
            mse += (a[idx] - b[idx]) ** 2
        mse /= a.size
        assert abs(psnr(a, b) - 10 * math.log10(1 / mse)) < 1e-9

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))

    def test_symmetric_and_monotone_in_noise(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(0, 1, (1, 3, 16, 16))
        noise = rng.standard_normal(gt.shape)
        vals = [psnr(gt + s * noise, gt) for s in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]
        assert psnr(gt, gt + 0.05 * noise) == psnr(gt + 0.05 * noise, gt)


class TestSSIM:
    def test_identity_exact(self):
        x = np.random.default_rng(3).uniform(0, 1, (1, 3, 16, 20))
        assert ssim(x, x) == 1.0

    def test_inverted_image(self):
        x = np.random.default_rng(4).uniform(0, 1, (1, 1, 24, 24))
        v = ssim(1 - x, x)
        assert -1 < v < 0.5

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, (1, 2, 14, 15))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        assert abs(ssim(x, y) - direct_ssim(x, y)) < 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(6)
        x, y = rng.uniform(0, 1, (2, 1, 1, 12, 12))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)

    def test_too_small(self):
        with pytest.raises(GeometryError):
            ssim(np.zeros((1, 1, 10, 20)), np.zeros((1, 1, 10, 20)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_bounded(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(0, 1, (2, 1, 1, 12, 12))
        assert -1.0 <= ssim(x, y) <= 1.0


def test_mu_metrics_compose_with_tonemap():
    rng = np.random.default_rng(7)
    p, g = rng.uniform(0, 2, (2, 1, 3, 12, 12))
    m = sample_metrics(p, g)
    assert m["psnr_mu"] == psnr(mu_law_array(p), mu_law_array(g))
    assert m["ssim_mu"] == ssim(mu_law_array(p), mu_law_array(g))
    assert m["psnr_l"] == psnr(p, g)


def _sample(rng, name, gt=True):
    ldr = tuple(rng.uniform(0, 1, (1, 3, 16, 16)) for _ in range(3))
    return BracketSample(ldr, (0.25, 1.0, 4.0), rng.uniform(0, 1, (1, 3, 16, 16)) if gt else None, name)


class TestReport:
    def test_oracle_model(self):
        s = _sample(np.random.default_rng(8), "a")
        rep = evaluate_samples([s], lambda x: x.gt_hdr)
        assert rep.samples[0]["psnr_mu"] == 99.0 and rep.samples[0]["ssim_mu"] == 1.0
        assert rep.samples[0]["psnr_l"] == 99.0 and rep.samples[0]["ssim_l"] == 1.0

    def test_means_and_skips(self):
        rng = np.random.default_rng(9)
        samples = [_sample(rng, "a"), _sample(rng, "b"), _sample(rng, "c", gt=False)]
        rep = evaluate_samples(samples, lambda x: x.gt_hdr * 1.1)
        assert rep.skipped == 1 and len(rep.samples) == 2
        for k in ("psnr_mu", "ssim_l"):
            assert rep.mean[k] == (rep.samples[0][k] + rep.samples[1][k]) / 2

    def test_threads_match_serial(self):
        rng = np.random.default_rng(10)
        samples = [_sample(rng, str(i)) for i in range(4)]
        a = evaluate_samples(samples, lambda x: x.gt_hdr * 0.9)
        b = evaluate_samples(samples, lambda x: x.gt_hdr * 0.9, workers=3)
        assert a.samples == b.samples

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        rep = evaluate_samples([_sample(rng, "a"), _sample(rng, "b")], lambda x: x.gt_hdr ** 1.1, config_digest="c", checkpoint_digest="k")
        rep.write(tmp_path)
        back = EvalReport.read(tmp_path)
        assert back == rep
        assert "mean" in (tmp_path / "report.txt").read_text()
        assert json.loads((tmp_path / "report.json").read_text())["mean"] == rep.mean

    def test_malformed(self):
        with pytest.raises(DataError):
            EvalReport.from_json("{}")
