"""Sensor-space face-center alignment and the center detection regressor.

Because the capture is a convolution of the scene with the PSF, translating
the face translates the capture by the same pixel offset (away from
boundaries). Alignment therefore reduces to translating the capture so the
face center lands on the raster center, then center-cropping. Rotation and
scale are deliberately not corrected here; the training curriculum absorbs
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InvalidParameterError, TrainingDivergedError
from .networks import Network, center_net_config
from .optim import Adam
from .optics import Raster

INTERPOLATIONS = ("integer-shift", "subpixel-bilinear")


@dataclass(frozen=True)
class AlignConfig:
    crop_fraction: float = 0.60
    interpolation: str = "integer-shift"

    def __post_init__(self):
        if not 0.0 < self.crop_fraction <= 1.0:
            raise InvalidParameterError("crop_fraction must be in (0, 1]")
        if self.interpolation not in INTERPOLATIONS:
            raise InvalidParameterError(f"unknown interpolation {self.interpolation!r}")

    def crop_size(self, in_hw) -> tuple:
        h, w = in_hw
        out = (int(round(h * self.crop_fraction)), int(round(w * self.crop_fraction)))
        if min(out) < 8:
            raise InvalidParameterError(f"crop {out} smaller than 8 px; raise crop_fraction")
        return out


@dataclass(frozen=True)
class CenterEstimate:
    """Estimated face center in sensor-raster pixels (row, col order kept as cy/cx)."""

    cy: float
    cx: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidParameterError("confidence must be in [0, 1]")


def _check_center_inside(center: CenterEstimate, hw) -> None:
    h, w = hw
    if not (0 <= center.cy < h and 0 <= center.cx < w):
        raise InvalidParameterError(f"center ({center.cy}, {center.cx}) outside {h}x{w} raster")


def recenter_crop_batch(captures: Tensor, centers, cfg: AlignConfig) -> Tensor:
    """Align a batch (N,C,H,W): translate each center to the raster center, crop.

    ``centers`` is (N, 2) float (cy, cx). Integer mode rounds centers to whole
    pixels; subpixel mode blends the four neighboring integer windows with
    bilinear weights. Vacated boundary regions are zero-filled.
    """
    n = captures.shape[0]
    out_hw = cfg.crop_size(captures.shape[2:])
    centers = np.asarray(centers, dtype=np.float64).reshape(n, 2)
    if cfg.interpolation == "integer-shift":
        rounded = np.round(centers).astype(np.intp)
        return ad.gather_windows(captures, rounded, out_hw)
    base = np.floor(centers).astype(np.intp)
    frac = centers - base
    total = None
    for dy in (0, 1):
        for dx in (0, 1):
            wy = frac[:, 0] if dy else 1.0 - frac[:, 0]
            wx = frac[:, 1] if dx else 1.0 - frac[:, 1]
            weight = (wy * wx).astype(captures.dtype).reshape(n, 1, 1, 1)
            window = ad.gather_windows(captures, base + np.array([dy, dx]), out_hw)
            term = window * Tensor(weight)
            total = term if total is None else total + term
    return total


def recenter_crop(capture: Raster, center: CenterEstimate, cfg: AlignConfig = AlignConfig()) -> Raster:
    """Raster-level alignment; see :func:`recenter_crop_batch`."""
    _check_center_inside(center, capture.shape[:2])
    stack = Tensor(capture.data.transpose(2, 0, 1)[None])
    out = recenter_crop_batch(stack, [[center.cy, center.cx]], cfg)
    return Raster(out.data[0].transpose(1, 2, 0), capture.pixel_pitch_mm, origin=capture.origin)


# -- center detection ---------------------------------------------------------


class CenterDetectorModel:
    """Regressor from raw captures to normalized (cy, cx) in [0, 1]^2."""

    def __init__(self, input_shape, net_cfg=None, seed=0):
        self.net_cfg = net_cfg or center_net_config()
        self.net = Network(self.net_cfg, input_shape, seed=seed)
        self.input_shape = tuple(input_shape)

    def forward(self, captures: Tensor) -> Tensor:
        return self.net(captures)

    def predict(self, captures: np.ndarray) -> list:
        """Predict CenterEstimates for an (N,C,H,W) capture batch."""
        h, w = captures.shape[2], captures.shape[3]
        out = self.net(Tensor(captures)).data
        return [
            CenterEstimate(cy=float(np.clip(row[0] * (h - 1), 0, h - 1)),
                           cx=float(np.clip(row[1] * (w - 1), 0, w - 1)))
            for row in out
        ]


def center_loss(pred: Tensor, target_norm: np.ndarray) -> Tensor:
    """Mean squared error on coordinates normalized to [0, 1]."""
    diff = pred - Tensor(np.asarray(target_norm, dtype=pred.dtype))
    return (diff * diff).mean()


def train_center_detector(captures: np.ndarray, centers_px: np.ndarray, *, epochs=20,
                          lr=5e-4, batch_size=16, seed=0, net_cfg=None, val_fraction=0.2,
                          rng=None):
    """Fit the center regressor on (capture, ground-truth-center) pairs.

    ``captures`` is (N,C,H,W); ``centers_px`` is (N,2) pixel coordinates.
    Returns (model, validation RMSE in normalized coordinates). Training uses
    simulated captures under a frozen mask; callers that want joint mask
    optimization should use the student trainer's joint flag instead.
    """
    from .utils import rng_from

    n, _, h, w = captures.shape
    if n < 4:
        raise ContractError("need at least 4 samples to train the center detector")
    rng = rng or rng_from(seed, "center-detector")
    target = np.stack([centers_px[:, 0] / (h - 1), centers_px[:, 1] / (w - 1)], axis=1)

    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    model = CenterDetectorModel((captures.shape[1], h, w), net_cfg=net_cfg, seed=seed)
    opt = Adam(model.net.parameters(), lr=lr)
    for _ in range(epochs):
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm), batch_size):
            idx = train_idx[perm[start : start + batch_size]]
            pred = model.forward(Tensor(captures[idx]))
            loss = center_loss(pred, target[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError("center detector loss is non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()

    val_pred = model.forward(Tensor(captures[val_idx])).data
    rmse = float(np.sqrt(np.mean((val_pred - target[val_idx]) ** 2)))
    return model, rmse
