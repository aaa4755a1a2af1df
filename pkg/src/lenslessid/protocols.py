"""Verification protocols: pair generation, 10-fold threshold selection,
SNR sweeps, raw-capture sanity checks, and the ablation harness.

Pair accuracy follows the unrestricted-with-labeled-outside-data style:
pairs are split into 10 balanced folds; each fold's decision threshold is
chosen to maximize accuracy on the other nine and applied held-out. The
similarity is the cosine between unit embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .align import AlignConfig, recenter_crop_batch
from .autodiff import Tensor
from .errors import ContractError, InvalidParameterError
from .optics import NoiseConfig, add_noise, form_capture
from .scene import AugmentSpec, GeometryConfig, RealizedAugment, project, sample_augment
from .train import TrainedStudent, TrainedTeacher, train_student
from .utils import config_hash, rng_from, write_csv

PROTOCOL_MODES = ("aligned", "random")


@dataclass
class PairProtocol:
    """Labeled same/different pairs over dataset indices, in 10 folds."""

    pairs: list  # (index_a, index_b, same)
    folds: list  # disjoint np arrays of pair indices
    mode: str = "aligned"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PROTOCOL_MODES:
            raise InvalidParameterError(f"unknown protocol mode {self.mode!r}")
        all_idx = np.concatenate([np.asarray(f) for f in self.folds]) if self.folds else np.array([])
        if len(all_idx) != len(self.pairs) or len(np.unique(all_idx)) != len(self.pairs):
            raise InvalidParameterError("folds must partition the pair list")


def make_pair_protocol(labels, n_pairs: int = 300, n_folds: int = 10, mode: str = "aligned",
                       seed: int = 0) -> PairProtocol:
    """Balanced same/different pairs with stratified round-robin folds."""
    labels = np.asarray(labels)
    rng = rng_from(seed, "pairs", mode)
    by_label = {lab: np.flatnonzero(labels == lab) for lab in np.unique(labels)}
    labs = [lab for lab, idx in by_label.items() if len(idx) >= 2]
    if len(labs) < 2:
        raise ContractError("need >= 2 identities with >= 2 images for pair evaluation")

    same, diff = [], []
    for _ in range(n_pairs // 2):
        lab = labs[rng.integers(len(labs))]
        i, j = rng.choice(by_label[lab], size=2, replace=False)
        same.append((int(i), int(j), True))
        la, lb = rng.choice(labs, size=2, replace=False)
        i = rng.choice(by_label[la])
        j = rng.choice(by_label[lb])
        diff.append((int(i), int(j), False))

    pairs, folds = [], [[] for _ in range(n_folds)]
    for group in (same, diff):
        for k, pair in enumerate(group):
            folds[k % n_folds].append(len(pairs))
            pairs.append(pair)
    return PairProtocol(pairs=pairs, folds=[np.array(f, dtype=int) for f in folds],
                        mode=mode, seed=seed)


@dataclass
class EvalResult:
    accuracy_per_fold: list
    thresholds: list
    fingerprint: str = ""

    def __post_init__(self):
        for acc in self.accuracy_per_fold:
            if not (0.0 <= acc <= 1.0):
                raise InvalidParameterError(f"accuracy {acc} outside [0, 1]")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy_per_fold))


def threshold_candidates(scores: np.ndarray) -> np.ndarray:
    """Decision boundaries that realize every distinct >=-threshold split."""
    uniq = np.unique(scores)
    if len(uniq) == 0:
        return np.array([0.0])
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])


def select_threshold(scores: np.ndarray, same: np.ndarray) -> float:
    """Lowest threshold maximizing accuracy of (score >= t  <=>  same)."""
    scores = np.asarray(scores, dtype=float)
    same = np.asarray(same, dtype=bool)
    best_t, best_acc = None, -1.0
    for t in threshold_candidates(scores):
        acc = float(np.mean((scores >= t) == same))
        if acc > best_acc:
            best_acc, best_t = acc, float(t)
    return best_t


def accuracy_at(scores, same, threshold) -> float:
    return float(np.mean((np.asarray(scores) >= threshold) == np.asarray(same)))


def verify_pairs(protocol: PairProtocol, pipeline, fingerprint: str = "") -> EvalResult:
    """10-fold cross-validated pair accuracy for an image->embedding pipeline."""
    indices = sorted({i for a, b, _ in protocol.pairs for i in (a, b)})
    emb = pipeline.embeddings(indices)
    lookup = {idx: row for idx, row in zip(indices, emb)}
    scores = np.array([float(lookup[a] @ lookup[b]) for a, b, _ in protocol.pairs])
    same = np.array([s for _, _, s in protocol.pairs], dtype=bool)

    accs, thresholds = [], []
    for fold in protocol.folds:
        if len(fold) == 0:
            raise ContractError("empty fold in protocol")
        train_mask = np.ones(len(scores), dtype=bool)
        train_mask[fold] = False
        t = select_threshold(scores[train_mask], same[train_mask])
        thresholds.append(t)
        accs.append(accuracy_at(scores[fold], same[fold], t))
    return EvalResult(accuracy_per_fold=accs, thresholds=thresholds, fingerprint=fingerprint)


# -- embedding pipelines -----------------------------------------------------------


def _augment_for(mode: str, index: int, seed: int, n_backgrounds: int) -> RealizedAugment:
    if mode == "aligned":
        return RealizedAugment()
    rng = rng_from(seed, "protocol-augment", index)
    return sample_augment(AugmentSpec(), rng, n_backgrounds, background_alpha=1.0)


class RgbPipeline:
    """Aligned RGB images through the teacher (the lens-based control)."""

    def __init__(self, teacher: TrainedTeacher, dataset, mode: str = "aligned", seed: int = 0):
        self.teacher = teacher
        self.dataset = dataset
        self.mode = mode
        self.seed = seed

    def embeddings(self, indices) -> np.ndarray:
        geometry, align_cfg = self.teacher.geometry, self.teacher.align_cfg
        images = []
        for idx in indices:
            aug = _augment_for(self.mode, idx, self.seed, len(self.dataset.eval_backgrounds))
            bg = (self.dataset.eval_backgrounds[aug.background_index]
                  if aug.background_index >= 0 else None)
            sample = project(self.dataset.faces[idx], bg, geometry, aug)
            stack = Tensor(sample.scene.data.transpose(2, 0, 1)[None])
            aligned = recenter_crop_batch(stack, [sample.face_center_px], align_cfg)
            images.append(aligned.data[0])
        return self.teacher.embed_images(np.stack(images))


class LenslessPipeline:
    """Full encoded-domain pipeline: simulate, noise, center, align, embed."""

    def __init__(self, student: TrainedStudent, dataset, mode: str = "aligned",
                 noise: NoiseConfig | None = None, detector=None, seed: int = 0):
        self.student = student
        self.dataset = dataset
        self.mode = mode
        self.noise = noise
        self.detector = detector
        self.seed = seed
        self.psf = student.psf()

    def _capture(self, idx: int):
        geometry = self.student.geometry
        aug = _augment_for(self.mode, idx, self.seed, len(self.dataset.eval_backgrounds))
        bg = (self.dataset.eval_backgrounds[aug.background_index]
              if aug.background_index >= 0 else None)
        sample = project(self.dataset.faces[idx], bg, geometry, aug)
        capture = form_capture(sample.scene, self.psf)
        if self.noise is not None and not math.isinf(self.noise.target_snr_db):
            capture = add_noise(capture, replace(self.noise, seed=self.noise.seed + idx))
        return capture, sample

    def raw_captures(self, indices) -> list:
        return [self._capture(idx)[0] for idx in indices]

    def embeddings(self, indices) -> np.ndarray:
        geometry = self.student.geometry
        h, w = geometry.sensor_px
        captures, centers = [], []
        for idx in indices:
            capture, sample = self._capture(idx)
            captures.append(capture.data.transpose(2, 0, 1))
            if not self.student.student_cfg.alignment:
                centers.append((h // 2, w // 2))
            elif self.detector is not None:
                est = self.detector.predict(capture.data.transpose(2, 0, 1)[None].astype(np.float32))[0]
                centers.append((est.cy, est.cx))
            else:
                centers.append(sample.face_center_px)
        stack = Tensor(np.stack(captures).astype(np.float32))
        aligned = recenter_crop_batch(stack, np.array(centers, dtype=float),
                                      self.student.align_cfg)
        return self.student.embed_images(aligned.data)


class RawCaptureTeacherPipeline:
    """The RGB teacher applied directly to raw encoded captures."""

    def __init__(self, teacher: TrainedTeacher, lensless: LenslessPipeline):
        self.teacher = teacher
        self.lensless = lensless

    def embeddings(self, indices) -> np.ndarray:
        captures = self.lensless.raw_captures(indices)
        stack = np.stack([c.data.transpose(2, 0, 1) for c in captures]).astype(np.float32)
        return self.teacher.embed_images(stack)


# -- protocol-level operations ------------------------------------------------------


def snr_sweep(student: TrainedStudent, dataset, protocol: PairProtocol, snr_list,
              detector=None, seed: int = 0) -> list:
    """Accuracy at each SNR; rows with equal SNR share seeds and results."""
    rows = []
    for snr in snr_list:
        noise = None if math.isinf(snr) else NoiseConfig(snr, seed=int(seed + round(snr * 16)))
        pipeline = LenslessPipeline(student, dataset, mode=protocol.mode, noise=noise,
                                    detector=detector, seed=seed)
        result = verify_pairs(protocol, pipeline,
                              fingerprint=config_hash({"snr": snr, "seed": seed}))
        rows.append({"snr_db": snr, "accuracy": result.mean_accuracy})
    return rows


def rgb_model_on_lensless(teacher: TrainedTeacher, student: TrainedStudent, dataset,
                          protocol: PairProtocol, noise: NoiseConfig | None = None,
                          seed: int = 0) -> EvalResult:
    """Evaluate the RGB teacher on raw captures (expected: near chance)."""
    lensless = LenslessPipeline(student, dataset, mode=protocol.mode, noise=noise, seed=seed)
    pipeline = RawCaptureTeacherPipeline(teacher, lensless)
    return verify_pairs(protocol, pipeline,
                        fingerprint=config_hash({"rgb-on-lensless": seed}))


ABLATION_FLAGS = ("mask_optim", "alignment", "curriculum", "distillation")


def ablation_cells(base_cfg) -> list:
    """Full configuration plus each single-flag ablation, deduplicated."""
    cells, seen = [], set()
    for cfg in [base_cfg] + [replace(base_cfg, **{flag: False}) for flag in ABLATION_FLAGS]:
        key = cfg.flag_tuple()
        if key not in seen:
            seen.add(key)
            cells.append(cfg)
    return cells


def ablation_matrix(dataset, teacher: TrainedTeacher, mask_factory, base_student_cfg,
                    train_cfg, curriculum, protocols: dict, noise: NoiseConfig | None = None,
                    seed: int = 0, progress=None) -> list:
    """Train and evaluate every ablation cell; errors stop only their cell.

    ``protocols`` maps protocol mode -> PairProtocol (evaluated with
    ground-truth centers so the comparison isolates the training
    components). ``mask_factory()`` must return a fresh mask init so cells
    do not share state.
    """
    rows = []
    for cfg in ablation_cells(base_student_cfg):
        row = {flag: getattr(cfg, flag) for flag in ABLATION_FLAGS}
        try:
            student = train_student(dataset, teacher, mask_factory(), student_cfg=cfg,
                                    train_cfg=train_cfg, curriculum=curriculum)
            for mode, protocol in protocols.items():
                pipeline = LenslessPipeline(student, dataset, mode=mode, noise=noise, seed=seed)
                result = verify_pairs(protocol, pipeline)
                row[f"accuracy_{mode}"] = result.mean_accuracy
            row["error"] = ""
        except Exception as exc:  # cell failure must not kill the matrix
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
        if progress:
            progress(row)
    return rows


def results_to_csv(rows, path, fieldnames=None) -> None:
    if not rows:
        write_csv(path, fieldnames or ["empty"], [])
        return
    write_csv(path, fieldnames or list(rows[0].keys()), rows)


def long_format_rows(rows, x_key: str, series: dict) -> list:
    """Plot-ready long format: one row per (x, series, value)."""
    out = []
    for row in rows:
        for name, key in series.items():
            if key in row and row[key] != "":
                out.append({"x": row[x_key], "series": name, "value": row[key]})
    return out
