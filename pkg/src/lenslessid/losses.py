"""Training objectives: angular-margin identification, relational
distillation, and the mask-transparency penalty.

The identification loss is additive-angular-margin softmax over scaled
cosine similarities between unit embeddings and unit class weights. The
distillation loss transfers pairwise-distance and triple-angle structure
from a (frozen) teacher feature batch to the student batch, which tolerates
the modality gap between RGB inputs and encoded captures. The mask penalty
rewards total transparency so the optimizer is not driven toward pinhole
masks that would make captures recognizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InvalidParameterError
from .optics import MaskParams, transparency_t
from .utils import rng_from

UNIT_NORM_TOL = 1e-4


@dataclass
class ArcFaceHead:
    """Per-class weight directions plus (scale, margin) for the angular loss."""

    weights: Tensor  # n_classes x embedding_dim, normalized in forward
    scale: float = 64.0
    margin: float = 0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise InvalidParameterError("scale must be > 0")
        if not (0.0 <= self.margin < math.pi / 2):
            raise InvalidParameterError("margin must be in [0, pi/2)")

    @classmethod
    def init(cls, n_classes: int, embedding_dim: int, seed: int = 0, scale=64.0, margin=0.5,
             dtype=np.float32):
        rng = rng_from(seed, "arcface-head")
        w = rng.normal(0.0, 0.01, size=(n_classes, embedding_dim)).astype(dtype)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return cls(Tensor(w, requires_grad=True), scale=scale, margin=margin)

    @property
    def class_weights(self) -> np.ndarray:
        """Unit-norm class directions (the effective weights used in the loss)."""
        w = self.weights.data
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


def _check_unit_rows(arr: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(arr, axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if arr.size else 0.0
    if worst > UNIT_NORM_TOL:
        raise ContractError(f"{what} must be unit-norm (max deviation {worst:.2e})")


def arcface_loss(embeddings: Tensor, labels, head: ArcFaceHead) -> Tensor:
    """Mean additive-angular-margin cross-entropy over the batch.

    With margin 0 this reduces exactly to softmax cross-entropy over
    ``scale * cos(theta)`` logits.
    """
    labels = np.asarray(labels, dtype=int)
    if np.any(labels < 0) or np.any(labels >= head.n_classes):
        raise ContractError("labels must be in [0, n_classes)")
    _check_unit_rows(embeddings.data, "embeddings")

    w_unit = ad.l2_normalize_rows(head.weights)
    cos = embeddings @ w_unit.transpose((1, 0))
    onehot = np.zeros(cos.shape, dtype=cos.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0

    # cos(theta + m) = cos(theta) cos(m) - sin(theta) sin(m); guard the sqrt
    # away from |cos| = 1 where its derivative is singular.
    guard = 1e-9 if cos.dtype == np.float64 else 1e-7
    cos_y = (cos * Tensor(onehot)).sum(axis=1).clip(-1.0 + guard, 1.0 - guard)
    sin_y = (1.0 - cos_y * cos_y).sqrt()
    phi = cos_y * math.cos(head.margin) - sin_y * math.sin(head.margin)

    delta = (phi - cos_y).reshape(len(labels), 1)
    logits = (cos + Tensor(onehot) * delta) * head.scale
    target_logit = (logits * Tensor(onehot)).sum(axis=1)
    return (ad.logsumexp_rows(logits) - target_logit).mean()


@dataclass(frozen=True)
class RkdConfig:
    """Relational distillation weights (pairwise distances + triple angles)."""

    distance_weight: float = 1.0
    angle_weight: float = 2.0
    normalize: str = "mean-distance"

    def __post_init__(self):
        if self.distance_weight < 0 or self.angle_weight < 0:
            raise InvalidParameterError("RKD weights must be >= 0")
        if self.distance_weight == 0 and self.angle_weight == 0:
            raise InvalidParameterError("RKD weights must not both be zero")
        if self.normalize != "mean-distance":
            raise InvalidParameterError("only mean-distance normalization is supported")


def _huber(diff: Tensor) -> Tensor:
    """Smooth-L1 with unit transition, branch-blended for a.e. differentiability."""
    absd = diff.abs()
    quad_region = (absd.data <= 1.0).astype(diff.dtype)
    quad = 0.5 * diff * diff
    lin = absd - 0.5
    return quad * Tensor(quad_region) + lin * Tensor(1.0 - quad_region)


def _pair_indices(n: int):
    i, j = np.triu_indices(n, k=1)
    return i, j


def _pairwise_normalized_distances(feats: Tensor, idx) -> Tensor:
    i, j = idx
    diff = ad.gather_rows(feats, i) - ad.gather_rows(feats, j)
    d = ((diff * diff).sum(axis=1) + 1e-12).sqrt()
    return d / d.mean()


def _triple_indices(n: int):
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    keep = (i != j) & (j != k) & (i != k)
    return i[keep], j[keep], k[keep]


def _triple_angles(feats: Tensor, idx) -> Tensor:
    i, j, k = idx
    e1 = ad.gather_rows(feats, i) - ad.gather_rows(feats, j)
    e2 = ad.gather_rows(feats, k) - ad.gather_rows(feats, j)
    n1 = ((e1 * e1).sum(axis=1, keepdims=True) + 1e-12).sqrt()
    n2 = ((e2 * e2).sum(axis=1, keepdims=True) + 1e-12).sqrt()
    return ((e1 / n1) * (e2 / n2)).sum(axis=1)


def rkd_loss(student: Tensor, teacher, cfg: RkdConfig = RkdConfig()) -> Tensor:
    """Relational distillation between same-size feature batches.

    The distance term compares batch-mean-normalized pairwise distances, so
    it is invariant to uniform scaling of either feature set; the angle term
    compares cosines at each triple's vertex, invariant to scaling and to
    global rotations.
    """
    teacher = teacher if isinstance(teacher, Tensor) else Tensor(teacher)
    teacher = teacher.detach()
    n = student.shape[0]
    if teacher.shape[0] != n:
        raise ContractError("student and teacher batches must be the same size")
    if not np.all(np.isfinite(student.data)) or not np.all(np.isfinite(teacher.data)):
        raise ContractError("features must be finite")
    if n < 2 or (cfg.angle_weight > 0 and n < 3):
        raise ContractError(f"batch of {n} too small for relational distillation")

    total = None
    if cfg.distance_weight > 0:
        idx = _pair_indices(n)
        term = _huber(
            _pairwise_normalized_distances(student, idx)
            - _pairwise_normalized_distances(teacher, idx)
        ).mean()
        total = term * cfg.distance_weight
    if cfg.angle_weight > 0:
        idx3 = _triple_indices(n)
        term = _huber(_triple_angles(student, idx3) - _triple_angles(teacher, idx3)).mean()
        term = term * cfg.angle_weight
        total = term if total is None else total + term
    return total


def transparency_penalty(w: Tensor, alpha: float) -> Tensor:
    """-alpha * sum(w): constant gradient -alpha toward open masks."""
    if alpha < 0:
        raise InvalidParameterError("alpha must be >= 0")
    return w.sum() * (-alpha)


def mask_penalty(mask: MaskParams, alpha: float, logits: Tensor | None = None) -> Tensor:
    """Mask-size penalty on the effective transparency map.

    Pass the live ``logits`` tensor during training so gradients reach the
    mask parameters; otherwise the stored grid is evaluated.
    """
    logits_t = logits if logits is not None else Tensor(mask.logits)
    return transparency_penalty(transparency_t(logits_t, mask.binarize_mode), alpha)


def combined_objective(student_emb: Tensor, labels, head: ArcFaceHead, *,
                       teacher_feats=None, mask: MaskParams | None = None,
                       mask_logits: Tensor | None = None, alpha: float = 0.01,
                       rkd_cfg: RkdConfig = RkdConfig(), distill_weight: float = 1.0) -> Tensor:
    """Identification + distillation + mask penalty, in one scalar.

    ``teacher_feats=None`` or ``distill_weight=0`` disables distillation;
    ``mask=None`` or ``alpha=0`` disables the penalty, reducing the loss to
    the identification term alone.
    """
    total = arcface_loss(student_emb, labels, head)
    if teacher_feats is not None and distill_weight > 0:
        total = total + rkd_loss(student_emb, teacher_feats, rkd_cfg) * distill_weight
    if mask is not None and alpha > 0:
        total = total + mask_penalty(mask, alpha, logits=mask_logits)
    return total
