"""Lensless camera simulation: amplitude mask, PSF, image formation, noise.

The camera model follows a linear shift-invariant formation: the sensor
capture is the scene (already projected to sensor-plane coordinates)
convolved with the mask's point spread function. Two PSF models are
provided:

  * ``geometric-shadow`` (default): the PSF is the mask transparency map
    resampled from the mask unit grid onto the sensor pixel grid. With mask
    features much larger than visible wavelengths, diffraction blur is below
    one mask unit, so the shadow is an adequate and cheap approximation.
  * ``wave-propagation``: scalar Fresnel propagation of a unit on-axis plane
    wave through the mask over the mask-sensor distance, evaluated as a
    discrete convolution with the sampled Fresnel kernel; the PSF is the
    squared field magnitude. This is quadrature-consistent at the simulated
    sampling rate, not a supersampled physical-fidelity solver.

Amplitude masks modulate all wavelengths identically, so a single PSF is
shared across color channels.

All operations are pure given inputs and seeds; both PSF modes and the
formation are differentiable with respect to the mask logits through the
autodiff core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, GeometryError, InvalidParameterError
from .utils import read_summary, rng_from, write_summary

BINARIZE_MODES = ("continuous", "straight-through-binary")
PSF_MODES = ("geometric-shadow", "wave-propagation")
NOISE_MODELS = ("gaussian-snr", "shot-plus-read")

NOISE_DISABLED = math.inf  # target_snr_db sentinel


@dataclass
class MaskParams:
    """Learnable amplitude mask: transparency = squash(logits) in [0, 1].

    The logits grid is unbounded; ``transparency`` applies a logistic squash
    (continuous mode) or a straight-through binarization (forward hard 0/1,
    backward logistic gradient). Grid dimensions are fixed at construction.
    """

    logits: np.ndarray
    feature_size_mm: float = 0.0276
    binarize_mode: str = "continuous"

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.size == 0:
            raise InvalidParameterError("mask logits must be a nonempty 2-D grid")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidParameterError("mask logits must be finite")
        if self.feature_size_mm <= 0:
            raise InvalidParameterError("feature_size_mm must be > 0")
        if self.binarize_mode not in BINARIZE_MODES:
            raise InvalidParameterError(f"unknown binarize_mode {self.binarize_mode!r}")

    @property
    def shape(self):
        return self.logits.shape

    def transparency(self) -> np.ndarray:
        """Effective per-unit transparency w(x, y) in [0, 1]."""
        return transparency_t(Tensor(self.logits), self.binarize_mode).data

    @classmethod
    def random(cls, shape=(257, 308), feature_size_mm=0.0276, seed=0, scale=2.0,
               binarize_mode="continuous"):
        rng = rng_from(seed, "mask-init")
        return cls(rng.normal(0.0, scale, size=shape), feature_size_mm, binarize_mode)

    @classmethod
    def random_binary(cls, shape=(257, 308), feature_size_mm=0.0276, seed=0, p_open=0.5):
        """I.i.d. Bernoulli open/closed units (logit +/-12 => w ~ 0/1)."""
        rng = rng_from(seed, "mask-binary")
        bits = rng.random(shape) < p_open
        return cls(np.where(bits, 12.0, -12.0), feature_size_mm)

    @classmethod
    def open_mask(cls, shape=(257, 308), feature_size_mm=0.0276):
        return cls(np.full(shape, 20.0), feature_size_mm)


@dataclass
class Raster:
    """Nonnegative 2-D (optionally multi-channel) image with physical pitch.

    ``data`` has shape (H, W, C) with C in {1, 3}; values are linear
    intensity in arbitrary units. ``origin`` tags the plane the raster lives
    on ("scene" or "sensor").
    """

    data: np.ndarray
    pixel_pitch_mm: float
    origin: str = "scene"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise InvalidParameterError(f"raster must be HxWxC with C in {{1,3}}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("raster values must be finite")
        if np.any(arr < 0):
            raise InvalidParameterError("raster values must be nonnegative")
        if self.pixel_pitch_mm <= 0:
            raise InvalidParameterError("pixel_pitch_mm must be > 0")
        if self.origin not in ("scene", "sensor"):
            raise InvalidParameterError(f"unknown raster origin {self.origin!r}")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class PSF:
    """Sum-normalized point spread function on the sensor pixel grid."""

    kernel: np.ndarray
    pixel_pitch_mm: float
    normalization: str = "sum-to-one"

    def __post_init__(self):
        k = np.asarray(self.kernel)
        if k.ndim != 2:
            raise InvalidParameterError("PSF kernel must be 2-D")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise InvalidParameterError("PSF kernel must be nonnegative and finite")
        if self.normalization != "sum-to-one":
            raise InvalidParameterError("only sum-to-one normalization is supported")
        total = k.sum()
        if abs(total - 1.0) > 1e-9:
            raise InvalidParameterError(f"PSF not normalized: sum={total!r}")
        self.kernel = k


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor noise at a target mean SNR; ``target_snr_db=inf`` disables it."""

    target_snr_db: float = 30.0
    seed: int = 0
    model: str = "gaussian-snr"
    read_fraction: float = 0.25  # shot-plus-read: share of noise power that is signal-independent

    def __post_init__(self):
        if math.isnan(self.target_snr_db):
            raise InvalidParameterError("target_snr_db must not be NaN")
        if self.model not in NOISE_MODELS:
            raise InvalidParameterError(f"unknown noise model {self.model!r}")


# -- differentiable building blocks ------------------------------------------


def transparency_t(logits: Tensor, binarize_mode: str = "continuous") -> Tensor:
    """Squash logits to transparency; straight-through keeps logistic grads."""
    w = logits.sigmoid()
    if binarize_mode == "continuous":
        return w
    if binarize_mode == "straight-through-binary":
        hard = (w.data > 0.5).astype(w.dtype)
        return w + Tensor(hard - w.data)
    raise InvalidParameterError(f"unknown binarize_mode {binarize_mode!r}")


def _resample_matrix(n_out: int, pitch_out: float, n_in: int, pitch_in: float) -> np.ndarray:
    """Bilinear interpolation matrix from one centered physical grid to another.

    Sample positions outside the input extent map to zero (opaque beyond the
    mask edge).
    """
    pos_out = (np.arange(n_out) - (n_out - 1) / 2.0) * pitch_out
    idx = pos_out / pitch_in + (n_in - 1) / 2.0
    mat = np.zeros((n_out, n_in))
    lo = np.floor(idx).astype(int)
    frac = idx - lo
    for row in range(n_out):
        i, f = lo[row], frac[row]
        if 0 <= i < n_in:
            mat[row, i] = 1.0 - f
        if 0 <= i + 1 < n_in:
            mat[row, i + 1] = f
    return mat


def shadow_t(mask_w: Tensor, mask: MaskParams, geometry) -> Tensor:
    """Resample mask transparency onto the sensor pixel grid (paraxial shadow)."""
    hp, wp = geometry.sensor_px
    hm, wm = mask.shape
    rows = _resample_matrix(hp, geometry.sensor_pitch_mm, hm, mask.feature_size_mm)
    cols = _resample_matrix(wp, geometry.sensor_pitch_mm, wm, mask.feature_size_mm)
    rows = rows.astype(mask_w.dtype)
    cols = cols.astype(mask_w.dtype)
    # rows @ w @ cols.T, built from constant matmuls so gradients flow to w
    return ad.matmul_const(rows, mask_w) @ Tensor(cols.T)


def fresnel_kernel(n_rows: int, n_cols: int, pitch_mm: float, distance_mm: float,
                   wavelength_um: float) -> np.ndarray:
    """Sampled paraxial free-space kernel over all (2n-1) relative offsets."""
    lam = wavelength_um * 1e-3  # mm
    k = 2.0 * math.pi / lam
    dy = (np.arange(2 * n_rows - 1) - (n_rows - 1)) * pitch_mm
    dx = (np.arange(2 * n_cols - 1) - (n_cols - 1)) * pitch_mm
    r2 = dy[:, None] ** 2 + dx[None, :] ** 2
    amplitude = np.exp(1j * k * distance_mm) / (1j * lam * distance_mm)
    return amplitude * np.exp(1j * k * r2 / (2.0 * distance_mm)) * pitch_mm**2


def wave_intensity_t(u0: Tensor, kernel: np.ndarray) -> Tensor:
    """|u0 (*) kernel|^2 for a real aperture and complex free-space kernel.

    The adjoint uses the Wirtinger identity d|U|^2/du0 = 2 Re[K^T (G . U~)],
    realized as a convolution with the index-flipped kernel.
    """
    h, w = u0.shape
    ph, pw = 3 * h - 2, 3 * w - 2
    fk = np.fft.fft2(kernel, s=(ph, pw))
    fu = np.fft.fft2(u0.data, s=(ph, pw))
    full = np.fft.ifft2(fu * fk)
    field = full[h - 1 : 2 * h - 1, w - 1 : 2 * w - 1]
    out_data = (field.real**2 + field.imag**2).astype(u0.dtype)

    def backward(g):
        a = np.zeros((ph, pw), dtype=complex)
        a[:h, :w] = g * np.conj(field)
        flipped = kernel[::-1, ::-1]
        grad_full = np.fft.ifft2(np.fft.fft2(a) * np.fft.fft2(flipped, s=(ph, pw)))
        grad = 2.0 * grad_full[h - 1 : 2 * h - 1, w - 1 : 2 * w - 1].real
        u0._accumulate(grad.astype(u0.dtype))

    return Tensor._result(out_data, (u0,), backward, "wave_intensity")


def psf_t(logits: Tensor, mask: MaskParams, geometry, mode: str = "geometric-shadow",
          wavelength_um: float = 0.532) -> Tensor:
    """Differentiable PSF on the sensor grid, normalized to unit sum."""
    if mode not in PSF_MODES:
        raise InvalidParameterError(f"unknown PSF mode {mode!r}")
    w = transparency_t(logits, mask.binarize_mode)
    shadow = shadow_t(w, mask, geometry)
    if mode == "geometric-shadow":
        intensity = shadow
    else:
        kernel = fresnel_kernel(
            shadow.shape[0], shadow.shape[1], geometry.sensor_pitch_mm,
            geometry.mask_sensor_distance_mm, wavelength_um,
        )
        intensity = wave_intensity_t(shadow, kernel)
    total = intensity.sum()
    if total.data <= 1e-12:
        raise InvalidParameterError("mask is fully opaque: PSF cannot be normalized")
    return intensity / total


def capture_t(scene: Tensor, psf: Tensor) -> Tensor:
    """Sensor capture: per-channel linear convolution, cropped to sensor size."""
    return ad.fft_conv2d_same(scene, psf)


def add_noise_t(capture: Tensor, cfg: NoiseConfig, rng: np.random.Generator) -> Tensor:
    """Additive sensor noise at the target SNR; output clipped at zero.

    The noise realization is treated as a constant, so gradients pass
    through the unclipped region unchanged.
    """
    if math.isinf(cfg.target_snr_db):
        return capture
    x = capture.data
    signal_power = float(np.mean(x**2))
    if signal_power == 0.0:
        return capture
    noise_power = signal_power / (10.0 ** (cfg.target_snr_db / 10.0))
    if cfg.model == "gaussian-snr":
        noise = rng.normal(0.0, math.sqrt(noise_power), size=x.shape)
    else:
        mean_signal = float(np.mean(x))
        b = cfg.read_fraction * noise_power
        a = (1.0 - cfg.read_fraction) * noise_power / max(mean_signal, 1e-12)
        noise = rng.standard_normal(x.shape) * np.sqrt(a * x + b)
    return (capture + Tensor(noise.astype(x.dtype))).relu()


# -- public (raster-level) operations ------------------------------------------


def simulate_psf(mask: MaskParams, geometry, mode: str = "geometric-shadow",
                 wavelength_um: float = 0.532) -> PSF:
    """Simulate the mask's PSF at the sensor's simulation resolution."""
    if geometry.mask_sensor_distance_mm <= 0:
        raise InvalidParameterError("mask_sensor_distance_mm must be > 0")
    kernel = psf_t(Tensor(mask.logits), mask, geometry, mode, wavelength_um).data
    kernel = np.maximum(kernel, 0.0)
    kernel /= kernel.sum()
    return PSF(kernel=kernel, pixel_pitch_mm=geometry.sensor_pitch_mm)


def form_capture(scene: Raster, psf: PSF) -> Raster:
    """Form the sensor capture S = l * p (per channel, zero-padded FFT conv)."""
    if scene.origin != "sensor":
        raise GeometryError("scene raster must be in sensor-plane coordinates")
    if not math.isclose(scene.pixel_pitch_mm, psf.pixel_pitch_mm, rel_tol=1e-6):
        raise GeometryError(
            f"pixel pitch mismatch: scene {scene.pixel_pitch_mm} vs PSF {psf.pixel_pitch_mm}"
        )
    stack = Tensor(scene.data.transpose(2, 0, 1)[None])  # 1,C,H,W
    out = capture_t(stack, Tensor(psf.kernel)).data[0].transpose(1, 2, 0)
    return Raster(np.maximum(out, 0.0), scene.pixel_pitch_mm, origin="sensor")


def add_noise(capture: Raster, cfg: NoiseConfig) -> Raster:
    """Apply the configured noise model; deterministic for a fixed seed."""
    if math.isinf(cfg.target_snr_db) or not np.any(capture.data):
        return capture
    out = add_noise_t(Tensor(capture.data), cfg, rng_from(cfg.seed, "sensor-noise")).data
    return Raster(out, capture.pixel_pitch_mm, origin=capture.origin)


# -- import/export ---------------------------------------------------------------


def save_mask_png(mask: MaskParams, path: str) -> None:
    """16-bit grayscale PNG of the transparency map + key=value sidecar."""
    w = mask.transparency()
    img = np.round(np.clip(w, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(img).save(path)
    write_summary(str(path) + ".meta", {
        "kind": "mask",
        "feature_size_mm": repr(mask.feature_size_mm),
        "binarize_mode": mask.binarize_mode,
    })


def load_mask_png(path: str) -> MaskParams:
    meta = read_summary(str(path) + ".meta")
    img = np.asarray(Image.open(path), dtype=np.float64) / 65535.0
    w = np.clip(img, 1e-6, 1.0 - 1e-6)
    logits = np.log(w / (1.0 - w))
    return MaskParams(logits, float(meta["feature_size_mm"]),
                      meta.get("binarize_mode", "continuous"))


def save_psf_png(psf: PSF, path: str, distance_mm: float | None = None) -> None:
    peak = float(psf.kernel.max())
    scaled = psf.kernel / peak if peak > 0 else psf.kernel
    img = np.round(scaled * 65535.0).astype(np.uint16)
    Image.fromarray(img).save(path)
    meta = {"kind": "psf", "pixel_pitch_mm": repr(psf.pixel_pitch_mm), "peak": repr(peak)}
    if distance_mm is not None:
        meta["mask_sensor_distance_mm"] = repr(distance_mm)
    write_summary(str(path) + ".meta", meta)


def load_psf_png(path: str) -> PSF:
    meta = read_summary(str(path) + ".meta")
    img = np.asarray(Image.open(path), dtype=np.float64) / 65535.0
    kernel = img * float(meta["peak"])
    total = kernel.sum()
    if total <= 0:
        raise InvalidParameterError(f"PSF image {path} is all zero")
    return PSF(kernel / total, float(meta["pixel_pitch_mm"]))
