"""PSNR and SSIM against closed-form cases and scalar-loop oracles."""

import math

import numpy as np
import pytest

from plane4d.metrics import gaussian_window, psnr, ssim

from oracles import _gaussian_kernel_ref, psnr_ref, ssim_ref


class TestPsnr:
    def test_identical_is_infinite(self):
        img = np.full((8, 8, 3), 0.25)
        assert psnr(img, img) == math.inf

    def test_maximal_error_is_zero_db(self):
        assert psnr(np.zeros((8, 8)), np.ones((8, 8))) == 0.0

    def test_uniform_offset(self):
        a = np.full((16, 16), 0.5)
        b = np.full((16, 16), 0.6)
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_symmetric(self):
        rng = np.random.default_rng(71)
        a = rng.uniform(0.0, 1.0, (12, 12, 3))
        b = rng.uniform(0.0, 1.0, (12, 12, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_matches_oracle(self):
        rng = np.random.default_rng(72)
        for _ in range(5):
            a = rng.uniform(0.0, 1.0, (10, 10, 3))
            b = np.clip(a + rng.normal(0.0, 0.1, a.shape), 0.0, 1.0)
            assert abs(psnr(a, b) - psnr_ref(a, b)) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            psnr(np.full((4, 4), 1.5), np.zeros((4, 4)))
        with pytest.raises(ValueError, match="empty"):
            psnr(np.zeros((0, 4)), np.zeros((0, 4)))


class TestSsim:
    def test_identical_is_one(self):
        rng = np.random.default_rng(73)
        img = rng.uniform(0.0, 1.0, (16, 16))
        assert abs(ssim(img, img) - 1.0) < 1e-12

    def test_matches_windowed_oracle(self):
        rng = np.random.default_rng(74)
        a = rng.uniform(0.0, 1.0, (16, 16))
        b = np.clip(a + rng.normal(0.0, 0.05, a.shape), 0.0, 1.0)
        assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-8

    def test_rgb_is_channel_mean(self):
        rng = np.random.default_rng(75)
        a = rng.uniform(0.0, 1.0, (16, 16, 3))
        b = np.clip(a + rng.normal(0.0, 0.05, a.shape), 0.0, 1.0)
        per_channel = [ssim(a[..., c], b[..., c]) for c in range(3)]
        assert abs(ssim(a, b) - np.mean(per_channel)) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(76)
        a = rng.uniform(0.0, 1.0, (16, 16))
        b = rng.uniform(0.0, 1.0, (16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_inverted_checkerboard_is_negative(self):
        rows, cols = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        a = ((rows + cols) % 2).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0.0

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(77)
        a = rng.uniform(0.2, 0.8, (20, 20))
        mild = np.clip(a + rng.normal(0.0, 0.02, a.shape), 0.0, 1.0)
        harsh = np.clip(a + rng.normal(0.0, 0.2, a.shape), 0.0, 1.0)
        assert ssim(a, harsh) < ssim(a, mild) < 1.0

    def test_image_must_cover_a_window(self):
        small = np.zeros((10, 10))
        with pytest.raises(ValueError):
            ssim(small, small)


def test_gaussian_window_properties():
    k = gaussian_window()
    assert k.shape == (11, 11)
    assert abs(k.sum() - 1.0) < 1e-12
    assert np.array_equal(k, k.T)
    assert np.array_equal(k, k[::-1, ::-1])
    assert k[5, 5] == k.max()
    assert np.abs(k - _gaussian_kernel_ref()).max() < 1e-15
