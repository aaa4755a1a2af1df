"""Physical scene construction on the sensor-plane raster.

Face images are placed into the camera's field of view with a pinhole-style
mapping: the scene plane at distance d spans 2*d*tan(theta_CRA) centimeters
horizontally, so one scene centimeter covers W_px / scene_width_cm raster
pixels. Augmentations (shift, height, rotation, distance, background) are
realized in physical units and converted to pixels at projection time.

The toy dataset generates parametric synthetic "faces": each identity is a
fixed structural parameter vector (colors, texture orientation/frequency,
eye/mouth layout) and each image adds nuisance jitter. No human imagery
ships with or is required by the package.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import ClassVar, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import IngestionError, InvalidParameterError, OutOfFovError
from .optics import Raster
from .utils import rng_from

GAMMA = 2.2  # display gamma assumed when linearizing 8-bit images


@dataclass(frozen=True)
class GeometryConfig:
    """Camera geometry; defaults match the reference hardware description."""

    scene_distance_cm: float = 50.0
    face_height_cm: float = 27.0
    mask_sensor_distance_mm: float = 2.0
    cra_deg: float = 22.5  # chief-ray half angle
    sensor_px: tuple = (200, 240)
    sensor_pitch_mm: float = 0.035466

    def __post_init__(self):
        for name in ("scene_distance_cm", "face_height_cm", "mask_sensor_distance_mm",
                     "cra_deg", "sensor_pitch_mm"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be > 0")

    def scene_width_cm(self, distance_cm: float | None = None) -> float:
        d = self.scene_distance_cm if distance_cm is None else distance_cm
        return 2.0 * d * math.tan(math.radians(self.cra_deg))

    def px_per_cm(self, distance_cm: float | None = None) -> float:
        return self.sensor_px[1] / self.scene_width_cm(distance_cm)


@dataclass(frozen=True)
class AugmentSpec:
    """Augmentation ranges; each must stay inside the protocol maxima."""

    shift_cm: tuple = (-15.0, 15.0)
    face_height_cm: tuple = (22.0, 30.0)
    rotation_deg: tuple = (-30.0, 30.0)
    distance_cm: tuple = (40.0, 60.0)
    background: str = "corpus"  # off | corpus

    MAX: ClassVar[Optional["AugmentSpec"]] = None  # set after class definition

    def __post_init__(self):
        for name in ("shift_cm", "face_height_cm", "rotation_deg", "distance_cm"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidParameterError(f"{name}: min {lo} > max {hi}")
            if AugmentSpec.MAX is not None:
                mlo, mhi = getattr(AugmentSpec.MAX, name)
                if lo < mlo or hi > mhi:
                    raise InvalidParameterError(f"{name}: ({lo}, {hi}) outside ({mlo}, {mhi})")
        if self.background not in ("off", "corpus"):
            raise InvalidParameterError(f"unknown background mode {self.background!r}")

    @staticmethod
    def aligned() -> "AugmentSpec":
        return AugmentSpec(shift_cm=(0.0, 0.0), face_height_cm=(27.0, 27.0),
                           rotation_deg=(0.0, 0.0), distance_cm=(50.0, 50.0), background="off")

    def scaled(self, eta: dict) -> "AugmentSpec":
        """Interpolate ranges from the aligned setting toward this spec.

        ``eta`` maps axis name (shift, rotation, scale, distance, background)
        to a magnitude in [0, 1]; missing axes default to 1.
        """

        def lerp_range(rng_pair, center, magnitude):
            lo, hi = rng_pair
            return (center + magnitude * (lo - center), center + magnitude * (hi - center))

        bg_extent = eta.get("background", 1.0)
        return AugmentSpec(
            shift_cm=lerp_range(self.shift_cm, 0.0, eta.get("shift", 1.0)),
            face_height_cm=lerp_range(self.face_height_cm, 27.0, eta.get("scale", 1.0)),
            rotation_deg=lerp_range(self.rotation_deg, 0.0, eta.get("rotation", 1.0)),
            distance_cm=lerp_range(self.distance_cm, 50.0, eta.get("distance", 1.0)),
            background="off" if (self.background == "off" or bg_extent <= 0.0) else "corpus",
        )


AugmentSpec.MAX = AugmentSpec()


@dataclass(frozen=True)
class RealizedAugment:
    """Concrete augmentation values drawn from an AugmentSpec."""

    shift_cm: tuple = (0.0, 0.0)  # (dx, dy), scene centimeters
    face_height_cm: float = 27.0
    rotation_deg: float = 0.0
    distance_cm: float = 50.0
    background_index: int = -1  # -1 = no background
    background_alpha: float = 0.0


def sample_augment(spec: AugmentSpec, rng: np.random.Generator, n_backgrounds: int = 0,
                   background_alpha: float = 1.0) -> RealizedAugment:
    """Draw one realized augmentation; values always lie inside the spec."""
    u = rng.uniform
    dx = u(*spec.shift_cm)
    dy = u(*spec.shift_cm)
    use_bg = spec.background == "corpus" and n_backgrounds > 0 and background_alpha > 0
    return RealizedAugment(
        shift_cm=(dx, dy),
        face_height_cm=u(*spec.face_height_cm),
        rotation_deg=u(*spec.rotation_deg),
        distance_cm=u(*spec.distance_cm),
        background_index=int(rng.integers(n_backgrounds)) if use_bg else -1,
        background_alpha=background_alpha if use_bg else 0.0,
    )


@dataclass
class SceneSample:
    """A projected scene with its ground-truth face center."""

    scene: Raster
    identity: int
    face_center_px: tuple  # (cy, cx), integer raster pixels
    applied: RealizedAugment

    def __post_init__(self):
        h, w, _ = self.scene.shape
        cy, cx = self.face_center_px
        if not (0 <= cy < h and 0 <= cx < w):
            raise InvalidParameterError(f"face center {self.face_center_px} outside raster")


@dataclass
class FaceImage:
    """Canonical face image: linear RGB in [0, 1] plus a support mask."""

    rgb: np.ndarray  # Hf x Wf x 3
    alpha: np.ndarray  # Hf x Wf in [0, 1]
    identity: int


def check_augment_within(spec: AugmentSpec, aug: RealizedAugment) -> None:
    pairs = [
        (aug.shift_cm[0], spec.shift_cm), (aug.shift_cm[1], spec.shift_cm),
        (aug.face_height_cm, spec.face_height_cm),
        (aug.rotation_deg, spec.rotation_deg), (aug.distance_cm, spec.distance_cm),
    ]
    for value, (lo, hi) in pairs:
        if not (lo - 1e-9 <= value <= hi + 1e-9):
            raise InvalidParameterError(f"realized augmentation {value} outside [{lo}, {hi}]")


def project(face: FaceImage, background: Raster | None, geometry: GeometryConfig,
            aug: RealizedAugment) -> SceneSample:
    """Composite a face into the sensor-plane scene raster.

    The face is scaled so its physical height matches ``aug.face_height_cm``
    at ``aug.distance_cm``, rotated about its center (bilinear), and placed
    with its center at the raster center plus the pixel-rounded shift. The
    realized integer center is recorded as ground truth.
    """
    if face.rgb.size == 0:
        raise InvalidParameterError("face image is empty")
    h_px, w_px = geometry.sensor_px
    ppc = geometry.px_per_cm(aug.distance_cm)

    center_y = h_px // 2 + int(round(aug.shift_cm[1] * ppc))
    center_x = w_px // 2 + int(round(aug.shift_cm[0] * ppc))

    face_h_px = aug.face_height_cm * ppc
    scale = face_h_px / face.rgb.shape[0]
    theta = math.radians(aug.rotation_deg)

    # Inverse map: scene pixel -> face pixel (rotate about the face center).
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    fy_c = (face.rgb.shape[0] - 1) / 2.0
    fx_c = (face.rgb.shape[1] - 1) / 2.0
    ys, xs = np.mgrid[0:h_px, 0:w_px]
    ry = (ys - center_y) / scale
    rx = (xs - center_x) / scale
    src_y = cos_t * ry + sin_t * rx + fy_c
    src_x = -sin_t * ry + cos_t * rx + fx_c

    coords = np.stack([src_y, src_x])
    alpha = ndimage.map_coordinates(face.alpha, coords, order=1, cval=0.0)
    channels = [ndimage.map_coordinates(face.rgb[:, :, c], coords, order=1, cval=0.0)
                for c in range(3)]
    face_layer = np.stack(channels, axis=-1)

    if not np.any(alpha > 1e-3):
        raise OutOfFovError(
            f"face at shift {aug.shift_cm} cm projects outside the {h_px}x{w_px} field of view"
        )

    if background is not None and aug.background_alpha > 0.0:
        bg = _fit_background(background.data, (h_px, w_px)) * aug.background_alpha
    else:
        bg = np.zeros((h_px, w_px, 3))
    scene = bg * (1.0 - alpha[:, :, None]) + face_layer
    scene = np.clip(scene, 0.0, None)

    cy = int(np.clip(center_y, 0, h_px - 1))
    cx = int(np.clip(center_x, 0, w_px - 1))
    raster = Raster(scene.astype(np.float32), geometry.sensor_pitch_mm, origin="sensor")
    return SceneSample(scene=raster, identity=face.identity,
                       face_center_px=(cy, cx), applied=aug)


def _fit_background(bg: np.ndarray, hw: tuple) -> np.ndarray:
    h, w = hw
    if bg.shape[:2] == (h, w):
        return bg[:, :, :3] if bg.shape[2] == 3 else np.repeat(bg, 3, axis=2)
    ys = np.linspace(0, bg.shape[0] - 1, h)
    xs = np.linspace(0, bg.shape[1] - 1, w)
    grid = np.stack(np.meshgrid(ys, xs, indexing="ij"))
    out = [ndimage.map_coordinates(bg[:, :, min(c, bg.shape[2] - 1)], grid, order=1)
           for c in range(3)]
    return np.stack(out, axis=-1)


# -- synthetic identities -----------------------------------------------------


def _render_face(params: dict, rng: np.random.Generator, size=(48, 40)) -> FaceImage:
    """Draw one parametric face; identity structure + per-image jitter."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ny = (ys - cy) / (h / 2.0)
    nx = (xs - cx) / (w / 2.0)

    alpha = ((ny / 0.92) ** 2 + (nx / 0.72) ** 2 <= 1.0).astype(float)

    base = np.array(params["base_color"])
    angle = params["texture_angle"]
    freq = params["texture_freq"]
    phase = rng.uniform(0, 2 * math.pi)
    wave = 0.5 + 0.5 * np.sin(
        2 * math.pi * freq * (ny * math.cos(angle) + nx * math.sin(angle)) + phase
    )
    rgb = base[None, None, :] * (0.65 + 0.35 * wave[:, :, None] * params["texture_depth"])

    eye_y = -0.30 + params["eye_height"] + rng.normal(0, 0.01)
    eye_dx = params["eye_spacing"] + rng.normal(0, 0.01)
    eye_r2 = params["eye_radius"] ** 2
    for sign in (-1.0, 1.0):
        d2 = (ny - eye_y) ** 2 + (nx - sign * eye_dx) ** 2
        rgb[d2 <= eye_r2] = params["eye_color"]

    mouth_y = 0.45 + params["mouth_height"] + rng.normal(0, 0.01)
    mouth = (np.abs(ny - mouth_y) <= params["mouth_thickness"]) & (
        np.abs(nx) <= params["mouth_width"]
    )
    rgb[mouth] = params["mouth_color"]

    brightness = rng.uniform(0.8, 1.2)
    rgb = rgb * brightness + rng.normal(0.0, 0.02, size=rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0) * alpha[:, :, None]
    return FaceImage(rgb=rgb.astype(np.float32), alpha=alpha.astype(np.float32), identity=-1)


def _identity_params(rng: np.random.Generator) -> dict:
    hue = rng.uniform(0.25, 1.0, size=3)
    return {
        "base_color": 0.35 + 0.6 * hue / hue.max(),
        "texture_angle": rng.uniform(0, math.pi),
        "texture_freq": rng.uniform(1.5, 5.0),
        "texture_depth": rng.uniform(0.4, 1.0),
        "eye_height": rng.uniform(-0.08, 0.08),
        "eye_spacing": rng.uniform(0.22, 0.42),
        "eye_radius": rng.uniform(0.08, 0.16),
        "eye_color": rng.uniform(0.0, 0.25, size=3),
        "mouth_height": rng.uniform(-0.06, 0.06),
        "mouth_width": rng.uniform(0.18, 0.45),
        "mouth_thickness": rng.uniform(0.04, 0.10),
        "mouth_color": rng.uniform(0.0, 0.35, size=3),
    }


@dataclass
class ToyDataset:
    """Synthetic identity dataset plus disjoint background pools."""

    faces: list  # list[FaceImage]
    n_ids: int
    train_backgrounds: list = field(default_factory=list)  # list[Raster]
    eval_backgrounds: list = field(default_factory=list)
    seed: int = 0

    @property
    def labels(self) -> np.ndarray:
        return np.array([f.identity for f in self.faces], dtype=int)

    def __len__(self):
        return len(self.faces)


def make_backgrounds(n: int, seed: int, split: str, size=(64, 80)) -> list:
    """Procedural background corpus; train/eval pools use disjoint streams."""
    out = []
    for i in range(n):
        rng = rng_from(seed, "background", split, i)
        h, w = size
        ys, xs = np.mgrid[0:h, 0:w]
        img = np.zeros((h, w, 3))
        for c in range(3):
            gx, gy = rng.uniform(-1, 1), rng.uniform(-1, 1)
            img[:, :, c] = 0.5 + 0.5 * (gx * (xs / w - 0.5) + gy * (ys / h - 0.5))
        for _ in range(rng.integers(3, 8)):
            by, bx = rng.uniform(0, h), rng.uniform(0, w)
            radius = rng.uniform(4, max(h, w) / 2)
            blob = np.exp(-(((ys - by) ** 2 + (xs - bx) ** 2) / (2 * radius**2)))
            img += blob[:, :, None] * rng.uniform(-0.5, 0.5, size=3)
        img = np.clip(img, 0.0, 1.0)
        out.append(Raster(img.astype(np.float32), 1.0, origin="scene"))
    return out


def make_toy_dataset(n_ids: int, per_id: int, seed: int = 0, face_size=(48, 40),
                     n_backgrounds: int = 24) -> ToyDataset:
    """Generate ``n_ids * per_id`` synthetic face images with labels."""
    if n_ids < 2:
        raise InvalidParameterError("need at least 2 identities")
    faces = []
    for ident in range(n_ids):
        params = _identity_params(rng_from(seed, "identity", ident))
        for j in range(per_id):
            img = _render_face(params, rng_from(seed, "image", ident, j), size=face_size)
            img.identity = ident
            faces.append(img)
    return ToyDataset(
        faces=faces,
        n_ids=n_ids,
        train_backgrounds=make_backgrounds(n_backgrounds, seed, "train"),
        eval_backgrounds=make_backgrounds(n_backgrounds, seed, "eval"),
        seed=seed,
    )


# -- dataset serialization -----------------------------------------------------


def save_image_folder(dataset: ToyDataset, path: str) -> None:
    """Write faces as 8-bit PNGs (gamma-encoded) plus a TSV manifest."""
    os.makedirs(path, exist_ok=True)
    lines = []
    for i, face in enumerate(dataset.faces):
        name = f"face_{i:05d}.png"
        encoded = np.round((face.rgb ** (1.0 / GAMMA)) * 255.0).astype(np.uint8)
        Image.fromarray(encoded, mode="RGB").save(os.path.join(path, name))
        lines.append(f"{name}\t{face.identity}")
    with open(os.path.join(path, "manifest.tsv"), "w") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def load_image_folder(path: str, manifest: str = "manifest.tsv") -> list:
    """Load an image folder into FaceImages using its manifest.

    Manifest lines are ``relative_path<TAB>identity_id``; ordering follows
    the manifest. Images are linearized with inverse gamma 2.2.
    """
    manifest_path = os.path.join(path, manifest)
    if not os.path.exists(manifest_path):
        if not os.path.isdir(path) or not os.listdir(path):
            return []
        raise IngestionError(f"manifest {manifest_path} not found")
    faces = []
    with open(manifest_path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                rel, label = line.split("\t")
            except ValueError as exc:
                raise IngestionError(f"{manifest_path}:{lineno}: malformed line") from exc
            file_path = os.path.join(path, rel)
            try:
                img = np.asarray(Image.open(file_path).convert("RGB"), dtype=np.float64)
            except OSError as exc:
                raise IngestionError(f"cannot read image file {file_path}") from exc
            rgb = ((img / 255.0) ** GAMMA).astype(np.float32)
            faces.append(FaceImage(rgb=rgb, alpha=np.ones(rgb.shape[:2], dtype=np.float32),
                                   identity=int(label)))
    return faces
