import numpy as np
import pytest

from lenslessid.errors import ContractError
from lenslessid.metrics import psnr, ssim


def natural_image(shape=(64, 72), seed=0):
    """Smooth blobby test image (natural-ish statistics, values in [0,1])."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    img = 0.4 + 0.2 * np.sin(xs / 7.0) * np.cos(ys / 9.0)
    for _ in range(6):
        cy, cx = rng.uniform(0, shape[0]), rng.uniform(0, shape[1])
        r = rng.uniform(4, 15)
        img += rng.uniform(-0.3, 0.3) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * r * r))
    return np.clip(img, 0, 1)


class TestPsnr:
    def test_identical_images_capped(self):
        img = natural_image()
        assert psnr(img, img) == 99.0

    def test_uniform_error_arithmetic(self):
        a = np.zeros((50, 50))
        b = np.full((50, 50), 0.1)  # MSE = 0.01
        assert psnr(a, b, peak=1.0) == pytest.approx(20.0)

    def test_symmetry(self):
        a, b = natural_image(seed=1), natural_image(seed=2)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_identical_images_unity(self):
        img = natural_image()
        assert ssim(img, img) == pytest.approx(1.0)

    def test_matches_reference_implementation(self):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        a = natural_image(seed=3)
        b = np.clip(a * 0.9, 0, 1)
        mine = ssim(a, b, peak=1.0)
        reference = skimage_metrics.structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0,
        )
        assert abs(mine - reference) < 1e-3

    def test_matches_reference_on_noisy_pair(self):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(4)
        a = natural_image(seed=4)
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        mine = ssim(a, b, peak=1.0)
        reference = skimage_metrics.structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0,
        )
        assert abs(mine - reference) < 1e-3

    def test_symmetry(self):
        a, b = natural_image(seed=5), natural_image(seed=6)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_multichannel_averages(self):
        a = np.stack([natural_image(seed=7)] * 3, axis=-1)
        b = np.clip(a + 0.02, 0, 1)
        got = ssim(a, b)
        single = ssim(a[:, :, 0], b[:, :, 0])
        assert got == pytest.approx(single)

    def test_in_valid_range(self):
        a, b = natural_image(seed=8), 1.0 - natural_image(seed=8)
        assert -1.0 <= ssim(a, b) <= 1.0
