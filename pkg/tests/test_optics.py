import math

import numpy as np
import pytest

from lenslessid import autodiff as ad
from lenslessid.autodiff import Tensor, grad_check
from lenslessid.errors import GeometryError, InvalidParameterError
from lenslessid.optics import (MaskParams, NoiseConfig, PSF, Raster, add_noise, capture_t,
                               form_capture, load_mask_png, load_psf_png, psf_t,
                               save_mask_png, save_psf_png, simulate_psf, transparency_t)
from lenslessid.scene import GeometryConfig


def unit_geometry(n=9, pitch=1.0):
    return GeometryConfig(sensor_px=(n, n), sensor_pitch_mm=pitch)


def brute_force_conv_same(scene, kernel):
    """Direct nested-loop convolution, cropped to the scene window."""
    h, w = scene.shape
    kh, kw = kernel.shape
    full = np.zeros((h + kh - 1, w + kw - 1))
    for i in range(h):
        for j in range(w):
            if scene[i, j] == 0.0:
                continue
            full[i : i + kh, j : j + kw] += scene[i, j] * kernel
    r0, c0 = kh // 2, kw // 2
    return full[r0 : r0 + h, c0 : c0 + w]


def fresnel_quadrature_oracle(w, feature_mm, distance_mm, wavelength_um):
    """Direct quadrature of the paraxial diffraction integral on the mask grid."""
    n_rows, n_cols = w.shape
    lam = wavelength_um * 1e-3
    k = 2 * math.pi / lam
    ys = (np.arange(n_rows) - (n_rows - 1) / 2) * feature_mm
    xs = (np.arange(n_cols) - (n_cols - 1) / 2) * feature_mm
    amp = np.exp(1j * k * distance_mm) / (1j * lam * distance_mm) * feature_mm**2
    field = np.zeros((n_rows, n_cols), dtype=complex)
    for oy in range(n_rows):
        for ox in range(n_cols):
            for my in range(n_rows):
                for mx in range(n_cols):
                    if w[my, mx] == 0.0:
                        continue
                    r2 = (ys[oy] - ys[my]) ** 2 + (xs[ox] - xs[mx]) ** 2
                    field[oy, ox] += w[my, mx] * amp * np.exp(1j * k * r2 / (2 * distance_mm))
    intensity = np.abs(field) ** 2
    return intensity / intensity.sum()


class TestMaskAndPsf:
    def test_transparency_in_unit_interval(self):
        mask = MaskParams.random((6, 7), seed=3)
        w = mask.transparency()
        assert np.all(w >= 0) and np.all(w <= 1)

    def test_non_finite_logits_rejected(self):
        with pytest.raises(InvalidParameterError):
            MaskParams(np.array([[np.nan, 0.0]]))

    def test_open_mask_gives_uniform_psf(self):
        geometry = unit_geometry(9)
        psf = simulate_psf(MaskParams.open_mask((9, 9), feature_size_mm=1.0), geometry)
        np.testing.assert_allclose(psf.kernel, 1.0 / 81.0, rtol=1e-6)

    def test_single_open_unit_shadow(self):
        logits = np.full((9, 9), -12.0)
        logits[4, 4] = 12.0
        mask = MaskParams(logits, feature_size_mm=1.0, binarize_mode="straight-through-binary")
        psf = simulate_psf(mask, unit_geometry(9))
        assert psf.kernel[4, 4] == pytest.approx(1.0)
        off = psf.kernel.copy()
        off[4, 4] = 0.0
        assert np.all(off == 0.0)

    def test_psf_normalized_and_matches_invariant(self):
        psf = simulate_psf(MaskParams.random((16, 20), seed=1, feature_size_mm=0.44),
                           GeometryConfig(sensor_px=(32, 40), sensor_pitch_mm=0.22))
        assert abs(psf.kernel.sum() - 1.0) < 1e-9
        assert np.all(psf.kernel >= 0)

    def test_wave_propagation_matches_quadrature_oracle(self):
        mask = MaskParams.random_binary((8, 8), feature_size_mm=0.0276, seed=7)
        geometry = GeometryConfig(sensor_px=(8, 8), sensor_pitch_mm=0.0276)
        psf = simulate_psf(mask, geometry, mode="wave-propagation", wavelength_um=0.532)
        w = mask.transparency()
        oracle = fresnel_quadrature_oracle(np.round(w), 0.0276, 2.0, 0.532)
        rel_l2 = np.linalg.norm(psf.kernel - oracle) / np.linalg.norm(oracle)
        assert rel_l2 < 1e-3

    @pytest.mark.parametrize("mode", ["geometric-shadow", "wave-propagation"])
    def test_psf_differentiable_wrt_logits(self, mode):
        mask = MaskParams.random((6, 6), seed=2, feature_size_mm=1.0)
        geometry = GeometryConfig(sensor_px=(6, 6), sensor_pitch_mm=1.0)
        target = np.random.default_rng(0).random((6, 6))

        def f(logits):
            psf = psf_t(logits, mask, geometry, mode)
            return ((psf - Tensor(target)) ** 2).sum()

        report = grad_check(f, [mask.logits], eps=1e-5, tol=1e-4)
        assert report["passed"], report["max_rel_error"]

    def test_straight_through_binary_forward_and_grad(self):
        logits = Tensor(np.array([[0.4, -0.3], [2.0, -2.0]]), requires_grad=True)
        w = transparency_t(logits, "straight-through-binary")
        np.testing.assert_array_equal(w.data, [[1.0, 0.0], [1.0, 0.0]])
        # sub-threshold jitter leaves the forward output unchanged
        jittered = transparency_t(Tensor(logits.data + 0.05), "straight-through-binary")
        np.testing.assert_array_equal(w.data, jittered.data)
        w.sum().backward()
        assert np.all(logits.grad > 0)  # logistic gradient, not zero


class TestFormCapture:
    def geometry(self):
        return GeometryConfig(sensor_px=(16, 20), sensor_pitch_mm=0.5)

    def make_psf(self, seed=0, shape=(16, 20)):
        k = np.random.default_rng(seed).random(shape)
        return PSF(k / k.sum(), pixel_pitch_mm=0.5)

    def test_impulse_gives_centered_psf(self):
        h, w = 16, 20
        scene = np.zeros((h, w))
        scene[h // 2, w // 2] = 1.0
        psf = self.make_psf()
        out = form_capture(Raster(scene, 0.5, origin="sensor"), psf)
        np.testing.assert_allclose(out.data[:, :, 0], psf.kernel, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        scene = rng.random((16, 20, 3))
        psf = self.make_psf(1)
        one = form_capture(Raster(scene, 0.5, origin="sensor"), psf)
        two = form_capture(Raster(2 * scene, 0.5, origin="sensor"), psf)
        np.testing.assert_allclose(two.data, 2 * one.data, rtol=1e-10, atol=1e-12)

    def test_matches_brute_force_convolution(self):
        rng = np.random.default_rng(11)
        scene = rng.random((5, 5))
        kernel = rng.random((3, 3))
        kernel /= kernel.sum()
        out = form_capture(Raster(scene, 1.0, origin="sensor"), PSF(kernel, 1.0))
        oracle = brute_force_conv_same(scene, kernel)
        assert np.max(np.abs(out.data[:, :, 0] - oracle)) < 1e-10

    def test_many_random_instances_match_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            h, w = rng.integers(3, 17, size=2)
            kh, kw = rng.integers(1, 9, size=2)
            scene = rng.random((h, w))
            kernel = rng.random((kh, kw))
            kernel /= kernel.sum()
            out = form_capture(Raster(scene, 1.0, origin="sensor"), PSF(kernel, 1.0))
            oracle = brute_force_conv_same(scene, kernel)
            assert np.max(np.abs(out.data[:, :, 0] - oracle)) < 1e-10

    def test_pitch_mismatch_raises(self):
        scene = Raster(np.ones((8, 8)), 0.5, origin="sensor")
        with pytest.raises(GeometryError):
            form_capture(scene, PSF(np.ones((3, 3)) / 9.0, 0.7))

    def test_nonnegative_output(self):
        rng = np.random.default_rng(9)
        scene = rng.random((12, 12))
        psf = self.make_psf(3, (12, 12))
        out = form_capture(Raster(scene, 0.5, origin="sensor"), psf)
        assert np.all(out.data >= 0)

    def test_translation_equivariance_interior(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            h, w = 16, 20
            scene = np.zeros((h, w))
            scene[4:12, 5:15] = rng.random((8, 10))
            dy, dx = int(rng.integers(-3, 4)), int(rng.integers(-4, 5))
            shifted = np.roll(scene, (dy, dx), axis=(0, 1))
            psf = self.make_psf(trial)
            cap = form_capture(Raster(scene, 0.5, origin="sensor"), psf).data[:, :, 0]
            cap_shifted = form_capture(Raster(shifted, 0.5, origin="sensor"), psf).data[:, :, 0]
            rolled = np.roll(cap, (dy, dx), axis=(0, 1))
            m = 5
            diff = np.abs(cap_shifted - rolled)[m:-m, m:-m]
            assert diff.max() < 1e-6

    def test_gradient_wrt_mask_logits_through_capture(self):
        geometry = GeometryConfig(sensor_px=(8, 8), sensor_pitch_mm=1.0)
        mask = MaskParams.random((8, 8), seed=4, feature_size_mm=1.0)
        scene = np.random.default_rng(8).random((1, 1, 8, 8))

        def f(logits):
            psf = psf_t(logits, mask, geometry)
            return (capture_t(Tensor(scene), psf) ** 2).sum()

        report = grad_check(f, [mask.logits], eps=1e-5, tol=1e-4)
        assert report["passed"], report["max_rel_error"]


class TestNoise:
    def capture(self, value=1.0, shape=(100, 100)):
        return Raster(np.full(shape, value), 1.0, origin="sensor")

    def test_infinite_snr_is_identity(self):
        cap = self.capture()
        out = add_noise(cap, NoiseConfig(target_snr_db=math.inf, seed=1))
        assert out is cap

    def test_zero_capture_returned_unchanged(self):
        cap = Raster(np.zeros((8, 8)), 1.0, origin="sensor")
        out = add_noise(cap, NoiseConfig(target_snr_db=30.0, seed=1))
        assert out is cap

    @pytest.mark.parametrize("model", ["gaussian-snr", "shot-plus-read"])
    def test_realized_snr_within_half_db(self, model):
        cap = self.capture(1.0)
        out = add_noise(cap, NoiseConfig(target_snr_db=30.0, seed=3, model=model))
        noise = out.data - cap.data
        snr = 10 * np.log10(np.mean(cap.data**2) / np.mean(noise**2))
        assert 29.5 <= snr <= 30.5

    def test_same_seed_bit_identical(self):
        cap = self.capture(0.7, (32, 32))
        cfg = NoiseConfig(target_snr_db=20.0, seed=42)
        a = add_noise(cap, cfg)
        b = add_noise(cap, cfg)
        assert np.array_equal(a.data, b.data)

    def test_output_clipped_at_zero(self):
        cap = self.capture(0.01, (64, 64))
        out = add_noise(cap, NoiseConfig(target_snr_db=0.0, seed=5))
        assert np.all(out.data >= 0)


class TestImportExport:
    def test_mask_png_roundtrip(self, tmp_path):
        mask = MaskParams.random((12, 14), seed=6, feature_size_mm=0.3)
        path = tmp_path / "mask.png"
        save_mask_png(mask, path)
        loaded = load_mask_png(path)
        assert loaded.feature_size_mm == mask.feature_size_mm
        np.testing.assert_allclose(loaded.transparency(), mask.transparency(), atol=2e-4)

    def test_psf_png_roundtrip(self, tmp_path):
        geometry = GeometryConfig(sensor_px=(16, 16), sensor_pitch_mm=0.5)
        psf = simulate_psf(MaskParams.random((8, 8), seed=2, feature_size_mm=1.0), geometry)
        path = tmp_path / "psf.png"
        save_psf_png(psf, path, distance_mm=geometry.mask_sensor_distance_mm)
        loaded = load_psf_png(path)
        assert loaded.pixel_pitch_mm == psf.pixel_pitch_mm
        np.testing.assert_allclose(loaded.kernel, psf.kernel, atol=2e-4)
