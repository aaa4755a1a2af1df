"""Desk-scale presets: a small geometry/mask/network combination that trains
in minutes on CPU while preserving the pipeline's mechanics. The library
defaults elsewhere keep the full-scale values; these presets exist so the
end-to-end experiments (ablations, attacks, sweeps) stay cheap."""

from __future__ import annotations

from .align import AlignConfig
from .networks import embedding_net_config
from .optics import MaskParams
from .scene import GeometryConfig
from .train import CurriculumState, TrainConfig

TOY_SENSOR_PX = (64, 80)
TOY_SENSOR_PITCH_MM = 0.11
TOY_MASK_SHAPE = (32, 40)
TOY_FEATURE_MM = 0.22


def toy_geometry() -> GeometryConfig:
    return GeometryConfig(sensor_px=TOY_SENSOR_PX, sensor_pitch_mm=TOY_SENSOR_PITCH_MM)


def toy_mask(seed: int = 0) -> MaskParams:
    return MaskParams.random(TOY_MASK_SHAPE, feature_size_mm=TOY_FEATURE_MM, seed=seed)


def toy_align() -> AlignConfig:
    return AlignConfig(crop_fraction=0.60)


def toy_net_config(embedding_dim: int = 128):
    return embedding_net_config(embedding_dim, widths=(12, 24, 48))


def toy_teacher_train(seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=30, lr=1e-3, batch_size=16, seed=seed, noise_snr_db=float("inf"))


def toy_student_train(seed: int = 0, epochs: int = 40) -> TrainConfig:
    return TrainConfig(epochs=epochs, lr=1e-3, batch_size=16, seed=seed, noise_snr_db=30.0)


def toy_curriculum(epochs: int = 40) -> CurriculumState:
    return CurriculumState(t_max=min(20, max(1, epochs // 2)))
