import math

import numpy as np
import pytest

from lenslessid.errors import IngestionError, InvalidParameterError, OutOfFovError
from lenslessid.scene import (AugmentSpec, FaceImage, GeometryConfig, RealizedAugment,
                              load_image_folder, make_backgrounds, make_toy_dataset,
                              project, sample_augment, save_image_folder)
from lenslessid.utils import rng_from


def toy_geometry():
    return GeometryConfig(sensor_px=(64, 80), sensor_pitch_mm=0.11)


def one_face(seed=0):
    return make_toy_dataset(2, 1, seed=seed).faces[0]


class TestGeometry:
    def test_scene_width_matches_cra_formula(self):
        g = GeometryConfig()
        expected = 2 * 50 * math.tan(math.radians(22.5))
        assert g.scene_width_cm() == pytest.approx(expected)
        assert expected == pytest.approx(41.42, abs=0.01)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(InvalidParameterError):
            GeometryConfig(scene_distance_cm=-1)


class TestProject:
    def test_aligned_face_is_centered(self):
        g = toy_geometry()
        sample = project(one_face(), None, g, RealizedAugment())
        assert sample.face_center_px == (g.sensor_px[0] // 2, g.sensor_px[1] // 2)
        # content symmetric around the recorded center
        assert sample.scene.data.sum() > 0

    def test_shift_displaces_center_by_pinhole_scaling(self):
        g = GeometryConfig(sensor_px=(200, 240), sensor_pitch_mm=0.035466)
        aug = RealizedAugment(shift_cm=(15.0, 0.0))
        sample = project(one_face(), None, g, aug)
        # independent recomputation of the pinhole arithmetic
        scene_width = 2 * 50.0 * math.tan(math.radians(22.5))
        expected_dx = round(15.0 * 240 / scene_width)
        assert sample.face_center_px == (100, 120 + expected_dx)

    def test_center_recoverable_from_applied_shift(self):
        g = toy_geometry()
        rng = rng_from(3, "aug")
        for _ in range(20):
            aug = sample_augment(AugmentSpec(), rng)
            sample = project(one_face(), None, g, aug)
            ppc = g.px_per_cm(aug.distance_cm)
            expected = (g.sensor_px[0] // 2 + int(round(aug.shift_cm[1] * ppc)),
                        g.sensor_px[1] // 2 + int(round(aug.shift_cm[0] * ppc)))
            assert sample.face_center_px == expected

    def test_project_deterministic_and_idempotent(self):
        g = toy_geometry()
        aug = sample_augment(AugmentSpec(), rng_from(7, "x"))
        a = project(one_face(), None, g, aug)
        b = project(one_face(), None, g, aug)
        assert np.array_equal(a.scene.data, b.scene.data)
        assert a.face_center_px == b.face_center_px

    def test_out_of_fov_raises(self):
        g = toy_geometry()
        spec_free = RealizedAugment(shift_cm=(200.0, 0.0))  # far outside the FOV
        with pytest.raises(OutOfFovError):
            project(one_face(), None, g, spec_free)

    def test_background_composited_under_face(self):
        g = toy_geometry()
        bg = make_backgrounds(1, 1, "eval", size=(32, 40))[0]
        aug = RealizedAugment(background_index=0, background_alpha=1.0)
        with_bg = project(one_face(), bg, g, aug)
        without = project(one_face(), None, g, RealizedAugment())
        corner = with_bg.scene.data[:4, :4]
        assert corner.mean() > without.scene.data[:4, :4].mean()


class TestAugmentSpec:
    def test_ranges_must_stay_inside_maxima(self):
        with pytest.raises(InvalidParameterError):
            AugmentSpec(shift_cm=(-20.0, 20.0))
        with pytest.raises(InvalidParameterError):
            AugmentSpec(rotation_deg=(5.0, -5.0))

    def test_scaled_ranges_shrink_toward_aligned(self):
        spec = AugmentSpec().scaled({"shift": 0.0, "rotation": 0.5, "scale": 0.0,
                                     "distance": 0.0, "background": 0.0})
        assert spec.shift_cm == (0.0, 0.0)
        assert spec.rotation_deg == (-15.0, 15.0)
        assert spec.background == "off"

    def test_sampled_values_always_inside_spec(self):
        spec = AugmentSpec()
        rng = rng_from(11, "prop")
        for _ in range(10_000):
            aug = sample_augment(spec, rng, n_backgrounds=4)
            assert spec.shift_cm[0] <= aug.shift_cm[0] <= spec.shift_cm[1]
            assert spec.shift_cm[0] <= aug.shift_cm[1] <= spec.shift_cm[1]
            assert spec.face_height_cm[0] <= aug.face_height_cm <= spec.face_height_cm[1]
            assert spec.rotation_deg[0] <= aug.rotation_deg <= spec.rotation_deg[1]
            assert spec.distance_cm[0] <= aug.distance_cm <= spec.distance_cm[1]


class TestToyDataset:
    def test_two_ids_one_image_each(self):
        ds = make_toy_dataset(2, 1, seed=0)
        assert len(ds) == 2
        assert sorted(ds.labels.tolist()) == [0, 1]

    def test_requires_two_identities(self):
        with pytest.raises(InvalidParameterError):
            make_toy_dataset(1, 4)

    def test_same_seed_identical_bytes(self):
        a = make_toy_dataset(3, 2, seed=9)
        b = make_toy_dataset(3, 2, seed=9)
        for fa, fb in zip(a.faces, b.faces):
            assert np.array_equal(fa.rgb, fb.rgb)
            assert np.array_equal(fa.alpha, fb.alpha)

    def test_background_pools_disjoint(self):
        ds = make_toy_dataset(2, 1, seed=1, n_backgrounds=3)
        for tr in ds.train_backgrounds:
            for ev in ds.eval_backgrounds:
                assert not np.array_equal(tr.data, ev.data)


class TestImageFolder:
    def test_empty_folder_gives_empty_dataset(self, tmp_path):
        assert load_image_folder(str(tmp_path)) == []

    def test_roundtrip_two_files(self, tmp_path):
        ds = make_toy_dataset(2, 1, seed=2)
        save_image_folder(ds, str(tmp_path))
        loaded = load_image_folder(str(tmp_path))
        assert len(loaded) == 2
        assert [f.identity for f in loaded] == [0, 1]
        # 8-bit gamma round trip is lossy but close
        assert np.mean(np.abs(loaded[0].rgb - ds.faces[0].rgb)) < 0.02

    def test_missing_file_raises_ingestion_error(self, tmp_path):
        (tmp_path / "manifest.tsv").write_text("missing.png\t0\n")
        with pytest.raises(IngestionError) as err:
            load_image_folder(str(tmp_path))
        assert "missing.png" in str(err.value)

    def test_malformed_manifest_line(self, tmp_path):
        (tmp_path / "manifest.tsv").write_text("no_tab_here\n")
        with pytest.raises(IngestionError):
            load_image_folder(str(tmp_path))
