"""Training loops: RGB teacher, lensless student + mask, and checkpointing.

Three loops share one optimizer and metric plumbing:

  * teacher: embedding net + identification head on aligned RGB images,
    no optics in the path.
  * student: jointly updates mask logits and the embedding net on simulated
    captures, with the augmentation curriculum, sensor noise, ground-truth
    center alignment, and relational distillation from the frozen teacher.
  * center detector: see :mod:`lenslessid.align`; the CLI wires it through
    the same checkpoint format.

Determinism: all randomness is derived from (seed, purpose, epoch, index)
streams, so results do not depend on evaluation order and training resumes
bit-exactly from an epoch-boundary checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .align import AlignConfig, recenter_crop_batch
from .autodiff import Tensor
from .errors import ContractError, InvalidParameterError, OutOfFovError, TrainingDivergedError, VersioningError
from .losses import ArcFaceHead, RkdConfig, arcface_loss, combined_objective
from .networks import NetConfig, Network, embedding_net_config
from .optics import MaskParams, NoiseConfig, PSF, add_noise_t, capture_t, psf_t
from .optim import Adam
from .scene import AugmentSpec, GeometryConfig, RealizedAugment, project, sample_augment
from .serialize import read_container, write_container
from .utils import append_csv_row, config_hash, rng_from

CURRICULUM_AXES = ("shift", "rotation", "scale", "background")

METRIC_FIELDS = ["epoch", "split", "loss_total", "loss_id", "loss_dist", "loss_penalty",
                 "pair_acc", "out_of_fov"]


@dataclass(frozen=True)
class CurriculumState:
    """Cosine-annealed warm-up of augmentation magnitudes.

    Each axis interpolates from eta_min at epoch 0 to eta_max at epoch
    t_max and holds eta_max thereafter. The distance augmentation follows
    the "scale" axis (a distance change acts on the sensor as a scale
    change).
    """

    t_max: int = 20
    ranges: tuple = tuple((axis, 0.0, 1.0) for axis in CURRICULUM_AXES)

    def __post_init__(self):
        if self.t_max < 1:
            raise InvalidParameterError("t_max must be >= 1")
        for axis, lo, hi in self.ranges:
            if lo > hi:
                raise InvalidParameterError(f"curriculum axis {axis}: eta_min > eta_max")

    def range_for(self, axis: str) -> tuple:
        for name, lo, hi in self.ranges:
            if name == axis:
                return lo, hi
        raise InvalidParameterError(f"unknown curriculum axis {axis!r}")

    def value(self, t: int, axis: str) -> float:
        return curriculum_value(self, t, axis)

    def etas(self, t: int) -> dict:
        return {axis: self.value(t, axis) for axis, _, _ in self.ranges}


def curriculum_value(state: CurriculumState, t: int, axis: str) -> float:
    """Eq.-of-motion for one axis: cosine warm-up, then hold at eta_max."""
    if t < 0:
        raise InvalidParameterError("epoch t must be >= 0")
    lo, hi = state.range_for(axis)
    if t >= state.t_max:
        return hi
    return lo + 0.5 * (hi - lo) * (1.0 - math.cos(math.pi * t / state.t_max))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 5e-4
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    noise_snr_db: float = 30.0
    alpha: float = 0.01  # mask-transparency penalty weight
    distill_weight: float = 1.0
    arcface_scale: float = 64.0
    arcface_margin: float = 0.5

    def __post_init__(self):
        # lr == 0 is allowed so no-op steps stay testable.
        if self.lr < 0:
            raise InvalidParameterError("lr must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidParameterError("bad epochs/batch_size")


@dataclass(frozen=True)
class StudentConfig:
    """Ablation switches for the lensless student."""

    mask_optim: bool = True
    alignment: bool = True
    curriculum: bool = True
    distillation: bool = True
    psf_mode: str = "geometric-shadow"
    rkd: RkdConfig = field(default_factory=RkdConfig)
    max_resample: int = 20

    def flag_tuple(self) -> tuple:
        return (self.mask_optim, self.alignment, self.curriculum, self.distillation)


@dataclass
class Checkpoint:
    """Versioned container payload: parameters, optimizer moments, counters.

    ``meta`` carries the config dict and its hash, the next epoch to run,
    and the curriculum position. Randomness is derived statelessly from
    (seed, epoch, index), so the (seed, next epoch) pair in the meta *is*
    the RNG state.
    """

    kind: str
    arrays: dict
    meta: dict

    @property
    def config_hash(self) -> str:
        return self.meta["config_hash"]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = dict(ckpt.meta)
    meta["kind"] = ckpt.kind
    write_container(path, ckpt.arrays, meta)


def load_checkpoint(path, expected_config: dict | None = None) -> Checkpoint:
    arrays, meta = read_container(path)
    kind = meta.pop("kind", "unknown")
    ckpt = Checkpoint(kind=kind, arrays=arrays, meta=meta)
    if expected_config is not None:
        expected_hash = config_hash(expected_config)
        if expected_hash != ckpt.config_hash:
            raise VersioningError(
                f"{path}: checkpoint config hash {ckpt.config_hash[:12]} does not match "
                f"requested configuration {expected_hash[:12]}"
            )
    return ckpt


# -- shared helpers -------------------------------------------------------------


def aligned_augment() -> RealizedAugment:
    return RealizedAugment()


def build_aligned_images(faces, geometry: GeometryConfig, align_cfg: AlignConfig) -> np.ndarray:
    """Project each face centered (no background) and center-crop: the RGB view."""
    out = []
    crop_hw = align_cfg.crop_size(geometry.sensor_px)
    for face in faces:
        sample = project(face, None, geometry, aligned_augment())
        stack = Tensor(sample.scene.data.transpose(2, 0, 1)[None])
        center = np.array([[geometry.sensor_px[0] // 2, geometry.sensor_px[1] // 2]])
        out.append(recenter_crop_batch(stack, center, align_cfg).data[0])
    arr = np.stack(out).astype(np.float32)
    assert arr.shape[2:] == crop_hw
    return arr


def _quick_pair_accuracy(embeddings: np.ndarray, labels: np.ndarray, seed: int,
                         n_pairs: int = 200) -> float:
    """Cheap best-threshold pair accuracy for progress reporting."""
    rng = rng_from(seed, "quick-pairs")
    labels = np.asarray(labels)
    n = len(labels)
    scores, truth = [], []
    for _ in range(n_pairs):
        i = int(rng.integers(n))
        same = bool(rng.integers(2))
        pool = np.flatnonzero((labels == labels[i]) if same else (labels != labels[i]))
        pool = pool[pool != i]
        if len(pool) == 0:
            continue
        j = int(pool[rng.integers(len(pool))])
        scores.append(float(embeddings[i] @ embeddings[j]))
        truth.append(same)
    scores, truth = np.array(scores), np.array(truth)
    best = 0.0
    for t in scores:
        best = max(best, float(np.mean((scores >= t) == truth)))
    return best


class _EmbedderMixin:
    """Batch embedding with a shared forward over (N,C,H,W) arrays."""

    def embed_images(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(images), batch_size):
            batch = Tensor(np.asarray(images[start : start + batch_size], dtype=np.float32))
            out.append(self.net(batch).data)
        return np.concatenate(out, axis=0)


@dataclass
class TrainedTeacher(_EmbedderMixin):
    net: Network
    head: ArcFaceHead
    net_cfg: NetConfig
    geometry: GeometryConfig
    align_cfg: AlignConfig
    train_cfg: TrainConfig
    metrics: list = field(default_factory=list)

    def config_dict(self) -> dict:
        return teacher_config_dict(self.net_cfg, self.geometry, self.align_cfg, self.train_cfg)

    def to_checkpoint(self, epoch: int) -> Checkpoint:
        arrays = {f"net.{k}": v for k, v in self.net.state_arrays().items()}
        arrays["head.weights"] = self.head.weights.data.copy()
        cfg = self.config_dict()
        return Checkpoint("teacher", arrays, {
            "config": cfg, "config_hash": config_hash(cfg), "epoch": epoch,
        })


def _dataclass_dict(obj) -> dict:
    d = asdict(obj)
    for key, value in list(d.items()):
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def teacher_config_dict(net_cfg, geometry, align_cfg, train_cfg) -> dict:
    return {
        "kind": "teacher",
        "net": list(net_cfg.layers),
        "embedding_dim": net_cfg.embedding_dim,
        "geometry": _dataclass_dict(geometry),
        "align": _dataclass_dict(align_cfg),
        "train": _dataclass_dict(train_cfg),
    }


def train_teacher(dataset, net_cfg: NetConfig | None = None,
                  train_cfg: TrainConfig = TrainConfig(),
                  geometry: GeometryConfig = GeometryConfig(),
                  align_cfg: AlignConfig = AlignConfig(),
                  metrics_path=None, pair_eval: bool = True) -> TrainedTeacher:
    """Fit the RGB teacher (embedding net + identification head).

    Inputs are aligned RGB projections of the dataset faces; there is no
    optics simulation in this path.
    """
    net_cfg = net_cfg or embedding_net_config()
    labels = dataset.labels
    n_classes = int(labels.max()) + 1
    images = build_aligned_images(dataset.faces, geometry, align_cfg)
    n, c, h, w = images.shape

    net = Network(net_cfg, (c, h, w), seed=train_cfg.seed)
    head = ArcFaceHead.init(n_classes, net_cfg.embedding_dim, seed=train_cfg.seed,
                            scale=train_cfg.arcface_scale, margin=train_cfg.arcface_margin)
    teacher = TrainedTeacher(net, head, net_cfg, geometry, align_cfg, train_cfg)
    opt = Adam(net.parameters() + [head.weights], lr=train_cfg.lr,
               beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.adam_eps)

    last_good = teacher.to_checkpoint(0)
    for epoch in range(train_cfg.epochs):
        perm = rng_from(train_cfg.seed, "teacher-order", epoch).permutation(n)
        losses = []
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start : start + train_cfg.batch_size]
            if len(idx) < 2:
                continue
            emb = net(Tensor(images[idx]))
            loss = arcface_loss(emb, labels[idx], head)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError("teacher loss is non-finite",
                                            last_checkpoint=last_good)
            losses.append(value)
            opt.zero_grad()
            loss.backward()
            opt.step()
        acc = ""
        if pair_eval:
            emb_all = teacher.embed_images(images)
            acc = f"{_quick_pair_accuracy(emb_all, labels, train_cfg.seed):.4f}"
        row = {"epoch": epoch, "split": "train", "loss_total": f"{np.mean(losses):.6f}",
               "loss_id": f"{np.mean(losses):.6f}", "loss_dist": "", "loss_penalty": "",
               "pair_acc": acc, "out_of_fov": 0}
        teacher.metrics.append(row)
        if metrics_path:
            append_csv_row(metrics_path, METRIC_FIELDS, row)
        last_good = teacher.to_checkpoint(epoch + 1)
    return teacher


def teacher_from_checkpoint(ckpt: Checkpoint, dataset_n_classes: int | None = None) -> TrainedTeacher:
    cfg = ckpt.meta["config"]
    net_cfg = NetConfig(layers=tuple(cfg["net"]), embedding_dim=cfg["embedding_dim"])
    geometry = GeometryConfig(**{**cfg["geometry"], "sensor_px": tuple(cfg["geometry"]["sensor_px"])})
    align_cfg = AlignConfig(**cfg["align"])
    train_cfg = TrainConfig(**cfg["train"])
    images_shape = (3,) + align_cfg.crop_size(geometry.sensor_px)
    net = Network(net_cfg, images_shape, seed=train_cfg.seed)
    net.load_state_arrays({k[4:]: v for k, v in ckpt.arrays.items() if k.startswith("net.")})
    head_w = ckpt.arrays["head.weights"]
    head = ArcFaceHead(Tensor(head_w.copy(), requires_grad=True),
                       scale=train_cfg.arcface_scale, margin=train_cfg.arcface_margin)
    return TrainedTeacher(net, head, net_cfg, geometry, align_cfg, train_cfg)


# -- student ---------------------------------------------------------------------


@dataclass
class TrainedStudent(_EmbedderMixin):
    mask: MaskParams
    net: Network
    head: ArcFaceHead
    net_cfg: NetConfig
    geometry: GeometryConfig
    align_cfg: AlignConfig
    train_cfg: TrainConfig
    student_cfg: StudentConfig
    curriculum: CurriculumState
    metrics: list = field(default_factory=list)
    out_of_fov_count: int = 0

    def psf(self) -> PSF:
        from .optics import simulate_psf

        return simulate_psf(self.mask, self.geometry, self.student_cfg.psf_mode)

    def config_dict(self) -> dict:
        return student_config_dict(self.net_cfg, self.geometry, self.align_cfg,
                                   self.train_cfg, self.student_cfg, self.curriculum,
                                   self.mask.shape, self.mask.feature_size_mm)


def student_config_dict(net_cfg, geometry, align_cfg, train_cfg, student_cfg, curriculum,
                        mask_shape, feature_size_mm) -> dict:
    scfg = _dataclass_dict(student_cfg)
    scfg["rkd"] = _dataclass_dict(student_cfg.rkd)
    return {
        "kind": "student",
        "net": list(net_cfg.layers),
        "embedding_dim": net_cfg.embedding_dim,
        "geometry": _dataclass_dict(geometry),
        "align": _dataclass_dict(align_cfg),
        "train": _dataclass_dict(train_cfg),
        "student": scfg,
        "curriculum": {"t_max": curriculum.t_max,
                       "ranges": [list(r) for r in curriculum.ranges]},
        "mask_shape": list(mask_shape),
        "feature_size_mm": feature_size_mm,
    }


class _StudentLoop:
    """Mutable training state for the student; checkpoints snapshot it."""

    def __init__(self, dataset, teacher: TrainedTeacher, mask_init: MaskParams,
                 student_cfg: StudentConfig, train_cfg: TrainConfig,
                 curriculum: CurriculumState, geometry, align_cfg, net_cfg):
        self.dataset = dataset
        self.teacher = teacher
        self.geometry = geometry or teacher.geometry
        self.align_cfg = align_cfg or teacher.align_cfg
        self.net_cfg = net_cfg or teacher.net_cfg
        self.student_cfg = student_cfg
        self.train_cfg = train_cfg
        self.curriculum = curriculum
        if student_cfg.curriculum and train_cfg.epochs and train_cfg.epochs < curriculum.t_max:
            raise InvalidParameterError("epochs must be >= curriculum t_max")

        self.labels = dataset.labels
        self.n_classes = int(self.labels.max()) + 1
        crop_hw = self.align_cfg.crop_size(self.geometry.sensor_px)
        self.logits = Tensor(mask_init.logits.astype(np.float32),
                             requires_grad=student_cfg.mask_optim)
        self.mask_meta = mask_init
        self.net = Network(self.net_cfg, (3,) + crop_hw, seed=train_cfg.seed + 1)
        self.head = ArcFaceHead.init(self.n_classes, self.net_cfg.embedding_dim,
                                     seed=train_cfg.seed + 1, scale=train_cfg.arcface_scale,
                                     margin=train_cfg.arcface_margin)
        params = ([self.logits] if student_cfg.mask_optim else [])
        params += self.net.parameters() + [self.head.weights]
        self.opt = Adam(params, lr=train_cfg.lr, beta1=train_cfg.beta1,
                        beta2=train_cfg.beta2, eps=train_cfg.adam_eps)
        self.epoch = 0
        self.out_of_fov = 0

        if student_cfg.distillation:
            aligned = build_aligned_images(dataset.faces, self.geometry, self.align_cfg)
            self.teacher_feats = teacher.embed_images(aligned)
        else:
            self.teacher_feats = None

    # -- snapshot/restore -------------------------------------------------

    def result(self) -> TrainedStudent:
        mask = MaskParams(self.logits.data.astype(np.float64), self.mask_meta.feature_size_mm,
                          self.mask_meta.binarize_mode)
        return TrainedStudent(mask, self.net, self.head, self.net_cfg, self.geometry,
                              self.align_cfg, self.train_cfg, self.student_cfg,
                              self.curriculum, out_of_fov_count=self.out_of_fov)

    def config_dict(self) -> dict:
        return student_config_dict(self.net_cfg, self.geometry, self.align_cfg,
                                   self.train_cfg, self.student_cfg, self.curriculum,
                                   self.mask_meta.shape, self.mask_meta.feature_size_mm)

    def to_checkpoint(self) -> Checkpoint:
        arrays = {f"net.{k}": v for k, v in self.net.state_arrays().items()}
        arrays["head.weights"] = self.head.weights.data.copy()
        arrays["mask.logits"] = self.logits.data.copy()
        arrays.update(self.opt.state_arrays("opt"))
        arrays["counters"] = np.array([self.out_of_fov], dtype=np.int64)
        cfg = self.config_dict()
        return Checkpoint("student", arrays, {
            "config": cfg, "config_hash": config_hash(cfg), "epoch": self.epoch,
            "curriculum_t": min(self.epoch, self.curriculum.t_max),
        })

    def restore(self, ckpt: Checkpoint):
        if ckpt.config_hash != config_hash(self.config_dict()):
            raise VersioningError("checkpoint does not match this training configuration")
        self.net.load_state_arrays({k[4:]: v for k, v in ckpt.arrays.items()
                                    if k.startswith("net.")})
        self.head.weights.data = ckpt.arrays["head.weights"].copy()
        self.logits.data = ckpt.arrays["mask.logits"].astype(np.float32).copy()
        self.opt.load_state_arrays(ckpt.arrays, "opt")
        self.out_of_fov = int(ckpt.arrays["counters"][0])
        self.epoch = int(ckpt.meta["epoch"])

    # -- one epoch ----------------------------------------------------------

    def _sample_scene(self, index: int, spec: AugmentSpec, bg_alpha: float, epoch: int):
        face = self.dataset.faces[index]
        rng = rng_from(self.train_cfg.seed, "augment", epoch, index)
        backgrounds = self.dataset.train_backgrounds
        for _ in range(self.student_cfg.max_resample):
            aug = sample_augment(spec, rng, len(backgrounds), background_alpha=bg_alpha)
            bg = backgrounds[aug.background_index] if aug.background_index >= 0 else None
            try:
                return project(face, bg, self.geometry, aug)
            except OutOfFovError:
                self.out_of_fov += 1
        raise OutOfFovError(f"sample {index}: still out of FOV after "
                            f"{self.student_cfg.max_resample} resamples")

    def run_epoch(self) -> dict:
        cfg, scfg = self.train_cfg, self.student_cfg
        epoch = self.epoch
        if scfg.curriculum:
            etas = self.curriculum.etas(epoch)
        else:
            etas = {axis: hi for axis, _, hi in self.curriculum.ranges}
        spec = AugmentSpec().scaled(etas)
        n = len(self.dataset.faces)
        perm = rng_from(cfg.seed, "student-order", epoch).permutation(n)
        h, w = self.geometry.sensor_px
        raster_center = np.array([h // 2, w // 2])

        sums = {"loss_total": 0.0, "loss_id": 0.0, "loss_dist": 0.0, "loss_penalty": 0.0}
        steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if len(idx) < 3:  # relational terms need 3+ samples
                continue
            samples = [self._sample_scene(int(i), spec, etas.get("background", 1.0), epoch)
                       for i in idx]
            scenes = np.stack([s.scene.data.transpose(2, 0, 1) for s in samples]).astype(np.float32)
            centers = np.array([s.face_center_px for s in samples])

            psf = psf_t(self.logits, self.mask_meta, self.geometry, scfg.psf_mode)
            captures = capture_t(Tensor(scenes), psf)
            noise_cfg = NoiseConfig(cfg.noise_snr_db, seed=cfg.seed)
            captures = add_noise_t(captures, noise_cfg,
                                   rng_from(cfg.seed, "noise", epoch, steps))
            align_centers = centers if scfg.alignment else np.tile(raster_center, (len(idx), 1))
            aligned = recenter_crop_batch(captures, align_centers, self.align_cfg)
            emb = self.net(aligned)

            loss_id = arcface_loss(emb, self.labels[idx], self.head)
            loss = loss_id
            dist_value = 0.0
            if scfg.distillation and cfg.distill_weight > 0:
                from .losses import rkd_loss

                loss_dist = rkd_loss(emb, self.teacher_feats[idx], scfg.rkd)
                dist_value = loss_dist.item() * cfg.distill_weight
                loss = loss + loss_dist * cfg.distill_weight
            pen_value = 0.0
            if cfg.alpha > 0:
                from .losses import mask_penalty

                pen = mask_penalty(self.mask_meta, cfg.alpha, logits=self.logits)
                pen_value = pen.item()
                loss = loss + pen

            total = loss.item()
            if not np.isfinite(total):
                raise TrainingDivergedError("student loss is non-finite")
            self.opt.zero_grad()
            loss.backward()
            self.opt.step()

            sums["loss_total"] += total
            sums["loss_id"] += loss_id.item()
            sums["loss_dist"] += dist_value
            sums["loss_penalty"] += pen_value
            steps += 1

        self.epoch += 1
        denom = max(steps, 1)
        return {"epoch": epoch, "split": "train",
                **{k: f"{v / denom:.6f}" for k, v in sums.items()},
                "pair_acc": "", "out_of_fov": self.out_of_fov}


def train_student(dataset, teacher: TrainedTeacher, mask_init: MaskParams,
                  student_cfg: StudentConfig = StudentConfig(),
                  train_cfg: TrainConfig = TrainConfig(),
                  curriculum: CurriculumState = CurriculumState(),
                  geometry: GeometryConfig | None = None,
                  align_cfg: AlignConfig | None = None,
                  net_cfg: NetConfig | None = None,
                  metrics_path=None, resume: Checkpoint | None = None,
                  checkpoint_cb=None) -> TrainedStudent:
    """Jointly optimize mask logits and the student embedding network.

    Per epoch the curriculum advances; per step the PSF is re-simulated from
    the current mask, captures are formed, noised, aligned with ground-truth
    centers, embedded, and scored by the combined objective. Out-of-FOV
    samples are redrawn and counted.
    """
    loop = _StudentLoop(dataset, teacher, mask_init, student_cfg, train_cfg,
                        curriculum, geometry, align_cfg, net_cfg)
    if resume is not None:
        loop.restore(resume)
    rows = []
    last_good = loop.to_checkpoint()
    while loop.epoch < train_cfg.epochs:
        try:
            row = loop.run_epoch()
        except TrainingDivergedError as exc:
            exc.last_checkpoint = last_good
            raise
        rows.append(row)
        if metrics_path:
            append_csv_row(metrics_path, METRIC_FIELDS, row)
        last_good = loop.to_checkpoint()
        if checkpoint_cb:
            checkpoint_cb(last_good)
    final = loop.result()
    final.metrics = rows
    return final


def student_from_checkpoint(ckpt: Checkpoint, dataset=None, teacher=None) -> TrainedStudent:
    cfg = ckpt.meta["config"]
    net_cfg = NetConfig(layers=tuple(cfg["net"]), embedding_dim=cfg["embedding_dim"])
    geometry = GeometryConfig(**{**cfg["geometry"], "sensor_px": tuple(cfg["geometry"]["sensor_px"])})
    align_cfg = AlignConfig(**cfg["align"])
    train_cfg = TrainConfig(**cfg["train"])
    s = dict(cfg["student"])
    rkd = RkdConfig(**s.pop("rkd"))
    student_cfg = StudentConfig(rkd=rkd, **s)
    curriculum = CurriculumState(t_max=cfg["curriculum"]["t_max"],
                                 ranges=tuple(tuple(r) for r in cfg["curriculum"]["ranges"]))
    crop_hw = align_cfg.crop_size(geometry.sensor_px)
    net = Network(net_cfg, (3,) + crop_hw, seed=train_cfg.seed + 1)
    net.load_state_arrays({k[4:]: v for k, v in ckpt.arrays.items() if k.startswith("net.")})
    head = ArcFaceHead(Tensor(ckpt.arrays["head.weights"].copy(), requires_grad=True),
                       scale=train_cfg.arcface_scale, margin=train_cfg.arcface_margin)
    mask = MaskParams(ckpt.arrays["mask.logits"].astype(np.float64),
                      cfg["feature_size_mm"])
    return TrainedStudent(mask, net, head, net_cfg, geometry, align_cfg, train_cfg,
                          student_cfg, curriculum,
                          out_of_fov_count=int(ckpt.arrays["counters"][0]))
