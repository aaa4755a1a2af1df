import numpy as np
import pytest

from lenslessid.attack import (AdmmConfig, AttackReport, DecoderConfig, admm_deconvolve,
                               evaluate_decoder, surrogate_psf_attack, train_decoder_attack,
                               true_psf_report)
from lenslessid.errors import ContractError, InvalidParameterError, SingularOperatorError
from lenslessid.metrics import psnr
from lenslessid.optics import MaskParams, PSF, Raster, form_capture, simulate_psf
from lenslessid.scene import (AugmentSpec, GeometryConfig, RealizedAugment, make_backgrounds,
                              make_toy_dataset, project, sample_augment)
from lenslessid.utils import rng_from


def toy_geometry():
    return GeometryConfig(sensor_px=(64, 80), sensor_pitch_mm=0.11)


def toy_setup(n_scenes=2, seed=0, with_background=True):
    g = toy_geometry()
    mask = MaskParams.random((32, 40), feature_size_mm=0.22, seed=seed)
    psf = simulate_psf(mask, g)
    ds = make_toy_dataset(max(2, n_scenes), 1, seed=seed + 1)
    bgs = make_backgrounds(4, seed + 2, "eval")
    rng = rng_from(seed, "attack-scenes")
    scenes, captures = [], []
    for i in range(n_scenes):
        if with_background:
            aug = sample_augment(AugmentSpec(), rng, len(bgs), background_alpha=1.0)
            bg = bgs[aug.background_index]
        else:
            aug, bg = RealizedAugment(), None
        sample = project(ds.faces[i % len(ds.faces)], bg, g, aug)
        scenes.append(sample.scene)
        captures.append(form_capture(sample.scene, psf))
    return g, mask, psf, scenes, captures


class TestAdmm:
    def test_delta_psf_identity(self):
        g, _, _, scenes, _ = toy_setup(1, with_background=False)
        kernel = np.zeros((33, 33))
        kernel[16, 16] = 1.0
        psf = PSF(kernel, g.sensor_pitch_mm)
        scene64 = Raster(scenes[0].data.astype(np.float64), g.sensor_pitch_mm, origin="sensor")
        cap = form_capture(scene64, psf)
        np.testing.assert_allclose(cap.data, scene64.data, atol=1e-9)
        cfg = AdmmConfig(reg_weight=0.0, iterations=100, tolerance=1e-12,
                         data_factor=1.0, tv_factor=1.0, nonneg_factor=1.0)
        recon = admm_deconvolve(cap, psf, cfg)
        assert np.max(np.abs(recon.data - cap.data)) < 1e-6

    def test_true_psf_self_consistency_psnr(self):
        _, _, psf, scenes, captures = toy_setup(1)
        recon, history = admm_deconvolve(captures[0], psf, AdmmConfig(iterations=100),
                                         with_history=True)
        achieved = psnr(recon.data, scenes[0].data)
        assert achieved > 25.0
        # noiseless data residual after the iteration cap
        assert history[-1]["data_residual"] < 1e-2

    def test_objective_decreases_overall(self):
        _, _, psf, scenes, captures = toy_setup(1)
        _, history = admm_deconvolve(captures[0], psf, AdmmConfig(iterations=60),
                                     with_history=True)
        assert history[-1]["objective"] <= history[0]["objective"]

    def test_random_surrogate_much_worse(self):
        g, _, psf, scenes, captures = toy_setup(1)
        surrogate = simulate_psf(MaskParams.random_binary((32, 40), 0.22, seed=77), g)
        cfg = AdmmConfig(iterations=100)
        true_psnr = psnr(admm_deconvolve(captures[0], psf, cfg).data, scenes[0].data)
        sur_psnr = psnr(admm_deconvolve(captures[0], surrogate, cfg).data, scenes[0].data)
        assert sur_psnr <= true_psnr - 8.0

    def test_zero_psf_raises(self):
        _, _, psf, _, captures = toy_setup(1)
        dead = PSF(np.full((8, 8), 1.0 / 64), psf.pixel_pitch_mm)
        dead.kernel = np.zeros((8, 8))  # bypass construction-time normalization
        with pytest.raises(SingularOperatorError):
            admm_deconvolve(captures[0], dead)

    def test_incompatible_grids_rejected(self):
        _, _, psf, _, captures = toy_setup(1)
        bad = PSF(psf.kernel, psf.pixel_pitch_mm * 2)
        with pytest.raises(ContractError):
            admm_deconvolve(captures[0], bad)

    def test_config_validation(self):
        with pytest.raises(InvalidParameterError):
            AdmmConfig(rho=0.0)
        with pytest.raises(InvalidParameterError):
            AdmmConfig(iterations=0)
        with pytest.raises(InvalidParameterError):
            AdmmConfig(regularizer="tv-isotropic")


class TestSurrogateAttack:
    def test_single_surrogate_one_score_per_capture(self):
        g, _, psf, scenes, captures = toy_setup(2)
        cfg = AdmmConfig(iterations=20)
        report = surrogate_psf_attack(captures, scenes, g, n_surrogates=1, cfg=cfg,
                                      feature_size_mm=0.22)
        assert len(report.per_image) == 2
        assert report.attack_size == 1

    def test_including_true_psf_dominates(self):
        g, _, psf, scenes, captures = toy_setup(1)
        cfg = AdmmConfig(iterations=30)
        with_true = surrogate_psf_attack(captures, scenes, g, n_surrogates=2, cfg=cfg,
                                         feature_size_mm=0.22, extra_psfs=[psf])
        true_only = true_psf_report(captures, scenes, psf, cfg)
        assert with_true.per_image[0]["psnr_db"] >= true_only.per_image[0]["psnr_db"]

    def test_report_csv(self, tmp_path):
        report = AttackReport(kind="surrogate-psf",
                              per_image=[{"index": 0, "psnr_db": 11.5, "ssim": 0.2}],
                              attack_size=3)
        path = tmp_path / "report.csv"
        report.to_csv(path)
        text = path.read_text()
        assert "psnr_db" in text and "11.5" in text
        assert report.mean_psnr == pytest.approx(11.5)

    def test_ssim_range_validated(self):
        with pytest.raises(InvalidParameterError):
            AttackReport(kind="x", per_image=[{"index": 0, "psnr_db": 1.0, "ssim": 1.5}])


class TestDecoderAttack:
    def make_pairs(self, n, seed=0):
        g, mask, psf, scenes, captures = toy_setup(n, seed=seed, with_background=False)
        return list(zip(captures, scenes))

    def test_zero_steps_equals_untrained_baseline(self):
        pairs = self.make_pairs(3)
        decoder, report = train_decoder_attack(pairs[:2], pairs[2:],
                                               DecoderConfig(steps=0, seed=1))
        baseline = evaluate_decoder(decoder, pairs[2:], attack_size=2)
        assert report.per_image[0]["psnr_db"] == baseline.per_image[0]["psnr_db"]

    def test_training_improves_over_untrained(self):
        pairs = self.make_pairs(6)
        untrained, report0 = train_decoder_attack(pairs[:4], pairs[4:],
                                                  DecoderConfig(steps=0, seed=2))
        _, report = train_decoder_attack(pairs[:4], pairs[4:],
                                         DecoderConfig(steps=150, lr=2e-3, seed=2))
        assert report.mean_psnr > report0.mean_psnr

    def test_train_eval_generalization_gap_direction(self):
        pairs = self.make_pairs(6)
        decoder, held_out = train_decoder_attack(pairs[:2], pairs[2:],
                                                 DecoderConfig(steps=800, lr=3e-3, seed=3))
        on_train = evaluate_decoder(decoder, pairs[:2], attack_size=2)
        assert on_train.mean_psnr >= held_out.mean_psnr

    def test_empty_pairs_rejected(self):
        with pytest.raises(ContractError):
            train_decoder_attack([], [], DecoderConfig(steps=1))
