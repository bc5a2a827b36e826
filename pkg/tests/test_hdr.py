import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehdr import autodiff as ad
from wavehdr.autodiff import Tensor
from wavehdr.errors import ConfigError, ShapeError
from wavehdr.gradcheck import check
from wavehdr.hdr import (
    BracketSample,
    build_input,
    exposure_times,
    gamma_to_linear,
    mu_law,
    reconstruction_loss,
    sobel_loss,
    total_loss,
    triangle_merge,
)

mpmath.mp.dps = 40


def T(h, mu=5000.0):
    return float(mpmath.log(1 + mpmath.mpf(mu) * mpmath.mpf(h)) / mpmath.log(1 + mpmath.mpf(mu)))


def t4(x):
    return Tensor(np.asarray(x, dtype=np.float64).reshape(1, 1, 1, -1))


def random_sample(rng, c=3, h=8, w=8):
    ldr = tuple(rng.uniform(0, 1, (1, c, h, w)) for _ in range(3))
    return BracketSample(ldr, exposure_times((-2, 0, 2)), rng.uniform(0, 2, (1, c, h, w)))


class TestGamma:
    def test_unit(self):
        assert gamma_to_linear(np.array(1.0), 1.0, 2.2) == 1.0

    def test_zero(self):
        assert gamma_to_linear(np.array(0.0), 3.0, 2.2) == 0.0

    def test_scalar_oracle(self):
        want = float(mpmath.power(mpmath.mpf("0.5"), mpmath.mpf("2.2")) / 4)
        assert abs(gamma_to_linear(np.array(0.5), 4.0, 2.2) - want) < 1e-12

    def test_bad_time(self):
        with pytest.raises(ConfigError):
            gamma_to_linear(np.array(0.5), 0.0)

    def test_monotone(self):
        x = np.linspace(0, 1, 50)
        assert np.all(np.diff(gamma_to_linear(x, 2.0)) > 0)

    def test_commutes_with_crop(self):
        x = np.random.default_rng(0).uniform(0, 1, (1, 3, 10, 12))
        np.testing.assert_array_equal(gamma_to_linear(x, 0.25)[:, :, 2:7, 3:9], gamma_to_linear(x[:, :, 2:7, 3:9], 0.25))


class TestBuildInput:
    def test_six_channels(self):
        s = random_sample(np.random.default_rng(1))
        ins = build_input(s)
        assert all(x.shape == (1, 6, 8, 8) for x in ins)
        for x, frame in zip(ins, s.ldr):
            np.testing.assert_array_equal(x.data[:, :3], frame)

    def test_single_channel(self):
        s = random_sample(np.random.default_rng(2), c=1)
        assert all(x.shape[1] == 2 for x in build_input(s))

    def test_linear_half_matches_oracle(self):
        s = random_sample(np.random.default_rng(3))
        lin = build_input(s)[1].data[:, 3:]
        for idx in np.ndindex(lin.shape):
            want = float(mpmath.power(mpmath.mpf(float(s.ldr[1][idx])), mpmath.mpf("2.2")) / s.exposure_time[1])
            assert abs(lin[idx] - want) < 1e-12

    def test_sample_validation(self):
        rng = np.random.default_rng(4)
        ldr = tuple(rng.uniform(0, 1, (1, 1, 4, 4)) for _ in range(3))
        with pytest.raises(ConfigError):
            BracketSample(ldr, (1.0, 1.0, 4.0))
        with pytest.raises(ShapeError):
            BracketSample(ldr, (0.25, 1.0, 4.0), np.ones((1, 1, 4, 5)))
        with pytest.raises(ConfigError):
            BracketSample(ldr, (0.25, 1.0, 4.0), -np.ones((1, 1, 4, 4)))


class TestMuLaw:
    def test_endpoints(self):
        assert mu_law(t4([0.0])).item() == 0.0
        assert mu_law(t4([1.0])).item() == 1.0

    def test_oracle_and_order(self):
        v = mu_law(t4([0.05, 0.1, 0.2])).data.ravel()
        assert abs(v[1] - T(0.1)) < 1e-12
        assert v[0] < v[1] < v[2]

    def test_bad_mu(self):
        with pytest.raises(ConfigError):
            mu_law(t4([0.5]), 0.0)

    def test_derivative_matches_fd(self):
        h = np.linspace(0.0, 1.0, 41)[1:]
        with ad.Graph() as g:
            x = g.param("x", h.reshape(1, 1, 1, -1))
            loss = ad.sum_all(mu_law(x))
        analytic = g.backward(loss)["x"].ravel()
        closed = 5000.0 / ((1 + 5000.0 * h) * math.log1p(5000.0))
        np.testing.assert_allclose(analytic, closed, rtol=1e-14)
        eps = 1e-7
        fd = (mu_law(t4(h + eps)).data - mu_law(t4(h - eps)).data).ravel() / (2 * eps)
        assert np.max(np.abs(fd - analytic) / analytic) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_strictly_increasing_bijection(self, a, b):
        va, vb = mu_law(t4([a, b])).data.ravel()
        assert 0.0 <= va <= 1.0
        if a < b:
            assert va < vb


def _direct_sobel(img):
    """Replicate-padded 3x3 correlation with explicit loops over one channel."""
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    h, w = img.shape
    p = np.zeros((h + 2, w + 2))
    for y in range(h + 2):
        for x in range(w + 2):
            p[y, x] = img[min(max(y - 1, 0), h - 1), min(max(x - 1, 0), w - 1)]
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            for i in range(3):
                for j in range(3):
                    gx[y, x] += kx[i][j] * p[y + i, x + j]
                    gy[y, x] += kx[j][i] * p[y + i, x + j]
    return gx, gy


class TestLosses:
    def test_reconstruction_identity(self):
        x = Tensor(np.random.default_rng(0).uniform(0, 2, (1, 3, 6, 6)))
        assert reconstruction_loss(x, x).item() == 0.0

    def test_reconstruction_perturbation(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(0.1, 1.0, (1, 3, 6, 6))
        eps = 1e-4
        got = reconstruction_loss(Tensor(gt + eps), Tensor(gt)).item()
        first_order = np.mean(eps * 5000.0 / ((1 + 5000.0 * gt) * math.log1p(5000.0)))
        assert abs(got - first_order) <= 0.05 * first_order

    def test_reconstruction_scalar_loop(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 3, (1, 2, 4, 5))
        b = rng.uniform(0, 3, (1, 2, 4, 5))
        want = sum(abs(T(a[i]) - T(b[i])) for i in np.ndindex(a.shape)) / a.size
        assert abs(reconstruction_loss(Tensor(a), Tensor(b)).item() - want) < 1e-12

    def test_reconstruction_shape_error(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 4))))

    def test_sobel_identity_and_constants(self):
        x = Tensor(np.random.default_rng(3).uniform(0, 2, (1, 3, 6, 6)))
        assert sobel_loss(x, x).item() == 0.0
        a = Tensor(np.full((1, 2, 5, 5), 0.3))
        b = Tensor(np.full((1, 2, 5, 5), 1.7))
        assert sobel_loss(a, b).item() == 0.0

    def test_step_edge_against_direct_correlation(self):
        img = np.zeros((1, 1, 6, 6))
        img[..., 3:] = 0.8
        img[..., 2, 1] = 0.3
        flat = np.zeros_like(img)
        got = sobel_loss(Tensor(img), Tensor(flat)).item()
        tm = np.vectorize(T)(img[0, 0])
        gx, gy = _direct_sobel(tm)
        want = np.mean(np.abs(gx)) + np.mean(np.abs(gy))
        assert abs(got - want) < 1e-12

    def test_sobel_ignores_added_constant(self):
        from wavehdr.hdr import sobel

        a = np.random.default_rng(4).uniform(0, 1, (1, 2, 6, 6))
        for u, v in zip(sobel(Tensor(a)), sobel(Tensor(a + 0.7))):
            np.testing.assert_allclose(u.data, v.data, atol=1e-14)

    def test_total_loss_composition(self):
        rng = np.random.default_rng(5)
        p = Tensor(rng.uniform(0, 2, (1, 3, 8, 8)))
        g = Tensor(rng.uniform(0, 2, (1, 3, 8, 8)))
        assert total_loss(p, g, 0.0).item() == reconstruction_loss(p, g).item()
        assert total_loss(g, g, 0.25).item() == 0.0
        want = reconstruction_loss(p, g).item() + 0.25 * sobel_loss(p, g).item()
        assert abs(total_loss(p, g, 0.25).item() - want) < 1e-12

    def test_negative_lambda(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ConfigError):
            total_loss(x, x, -0.1)

    def test_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = Tensor(rng.normal(0.5, 1.0, (1, 2, 5, 5)))
            g = Tensor(rng.uniform(0, 2, (1, 2, 5, 5)))
            assert total_loss(p, g).item() >= 0.0

    def test_negative_prediction_is_clamped(self):
        g = Tensor(np.full((1, 1, 4, 4), 0.5))
        assert reconstruction_loss(Tensor(np.full((1, 1, 4, 4), -3.0)), g).item() == pytest.approx(T(0.5), abs=1e-12)

    @pytest.mark.parametrize("shape", [(1, 1, 4, 4), (2, 3, 5, 6), (1, 2, 8, 3)])
    def test_loss_gradients(self, shape):
        rng = np.random.default_rng(7)
        gt = Tensor(rng.uniform(0.2, 1.0, shape))
        pred = rng.uniform(0.2, 1.0, shape)
        assert check(lambda t: reconstruction_loss(t["p"], gt), {"p": pred}) < 1e-4
        # for the Sobel terms keep every response away from the |.| kink:
        # a flat target and a prediction rising along both axes
        gt = Tensor(np.full(shape, 0.3))
        yy, xx = np.meshgrid(np.arange(shape[2]), np.arange(shape[3]), indexing="ij")
        pred = 0.4 + 0.2 * (yy + xx) + rng.uniform(0, 0.01, shape)
        assert check(lambda t: reconstruction_loss(t["p"], gt), {"p": pred}) < 1e-4
        assert check(lambda t: sobel_loss(t["p"], gt), {"p": pred}) < 1e-4
        assert check(lambda t: total_loss(t["p"], gt, 0.25), {"p": pred}) < 1e-4


class TestTriangleMerge:
    def test_static_scene_recovers_radiance(self):
        h = np.linspace(0.05, 0.8, 16).reshape(1, 1, 4, 4)
        t = exposure_times((-2, 0, 2))
        ldr = tuple(np.clip((h * ti) ** (1 / 2.2), 0, 1) for ti in t)
        merged = triangle_merge(BracketSample(ldr, t))
        np.testing.assert_allclose(merged, h, rtol=1e-12)

    def test_all_saturated_uses_short_exposure(self):
        t = exposure_times((-2, 0, 2))
        ones = np.ones((1, 1, 2, 2))
        merged = triangle_merge(BracketSample((ones, ones, ones), t))
        np.testing.assert_allclose(merged, 1.0 / t[0])
