"""Training objectives.

Every loss takes flat ``(N, J * D)`` batches (Tensors or arrays; ``(N, J, D)``
arrays are flattened) and returns a scalar Tensor, so the same code serves
training and plain evaluation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import diffpose as dp
from .autograd import Tensor
from .errors import (BehindCamera, ComponentKindMismatch, EmptyPool, MissingCameraGroundTruth,
                     ShapeMismatch)


class AllZeroConfidence(UserWarning):
    """Every confidence in a sample was zero; uniform weights were used."""


@dataclass(frozen=True)
class LossWeights:
    cam: float = 0.01
    reproj_paired: float = 0.5
    reproj_weak: float = 0.2
    pose3d: float = 1.0
    ref_paired: float = 1.0
    ref_weak: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")


PAIRED_COMPONENTS = ("ref", "cam", "reproj", "pose3d")
WEAK_COMPONENTS = ("ref", "reproj")


@dataclass
class BatchLossReport:
    kind: str
    batch_size: int
    total: float
    ref: float | None = None
    cam: float | None = None
    reproj: float | None = None
    pose3d: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _flat(x, dim: int) -> Tensor:
    t = ag.as_tensor(x)
    if t.ndim == 3:
        t = t.reshape(t.shape[0], -1)
    if t.ndim != 2 or t.shape[1] % dim:
        raise ShapeMismatch(f"expected (N, J*{dim}) batch", t.shape)
    return t


def _same(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(what, a.shape, b.shape)


def normalize_confidence(conf) -> np.ndarray:
    """Per-sample L1 normalization of raw joint confidences.

    A sample whose scores are all zero falls back to uniform weights and
    emits an :class:`AllZeroConfidence` warning.
    """
    c = np.asarray(conf, dtype=float)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if np.any(c < 0):
        raise ValueError("confidences must be non-negative")
    total = c.sum(axis=1, keepdims=True)
    empty = total[:, 0] <= 0
    out = np.where(empty[:, None], 1.0 / c.shape[1], c / np.where(total > 0, total, 1.0))
    if np.any(empty):
        warnings.warn(f"{int(empty.sum())} sample(s) with all-zero confidence; using uniform weights",
                      AllZeroConfidence, stacklevel=2)
    return out[0] if single else out


def _pair_sum(j: int, dim: int) -> np.ndarray:
    return np.kron(np.eye(j), np.ones((dim, 1)))


def _per_joint_sq(diff: Tensor, dim: int) -> Tensor:
    j = diff.shape[1] // dim
    return ag.matmul(ag.square(diff), _pair_sum(j, dim))


def refinement_loss(pred, gt, conf_norm) -> Tensor:
    """Confidence-weighted squared 2D error, averaged over samples and joints."""
    pred, gt = _flat(pred, 2), _flat(gt, 2)
    _same(pred, gt, "refinement_loss")
    c = ag.as_tensor(conf_norm)
    n, j = pred.shape[0], pred.shape[1] // 2
    if c.shape != (n, j):
        raise ShapeMismatch("refinement_loss confidences", c.shape, (n, j))
    return ag.scale(ag.tsum(_per_joint_sq(pred - gt, 2) * c), 1.0 / (n * j))


def check_depths(poses: np.ndarray, offset: np.ndarray, eps_depth: float):
    d = dp.depths(poses, offset)
    bad = np.flatnonzero(~np.all(d > eps_depth, axis=1))
    if bad.size:
        raise BehindCamera(f"joint depth <= {eps_depth}", int(bad[0]))


def reprojection_loss(poses, intrinsics, offset, target, eps_depth: float = 1e-3,
                      strict: bool = True) -> Tensor:
    """Mean squared 2D error between projected ``poses + offset`` and ``target``.

    ``eps_depth`` is in the units of ``poses``.  With ``strict`` a joint at or
    behind ``eps_depth`` raises :class:`BehindCamera`; otherwise its depth is
    clamped (training uses the clamped form so one bad sample cannot abort
    a run).
    """
    poses, target = _flat(poses, 3), _flat(target, 2)
    intrinsics, offset = ag.as_tensor(intrinsics), ag.as_tensor(offset)
    if poses.shape[1] // 3 != target.shape[1] // 2 or poses.shape[0] != target.shape[0]:
        raise ShapeMismatch("reprojection_loss", poses.shape, target.shape)
    if strict:
        check_depths(poses.data, offset.data, eps_depth)
    proj = dp.project(poses, intrinsics, offset, eps_depth)
    n, j = target.shape[0], target.shape[1] // 2
    return ag.scale(ag.tsum(ag.square(proj - target)), 1.0 / (n * j))


def camera_loss(intrinsics, offset, intrinsics_gt, offset_gt) -> Tensor:
    """Squared error over the 4 intrinsics and 3 offsets, summed per sample, batch mean."""
    if intrinsics_gt is None or offset_gt is None:
        raise MissingCameraGroundTruth("camera loss needs ground-truth intrinsics and offset")
    k, t = ag.as_tensor(intrinsics), ag.as_tensor(offset)
    kg, tg = ag.as_tensor(intrinsics_gt), ag.as_tensor(offset_gt)
    _same(k, kg, "camera_loss intrinsics")
    _same(t, tg, "camera_loss offset")
    n = k.shape[0] if k.ndim == 2 else 1
    return ag.scale(ag.tsum(ag.square(k - kg)) + ag.tsum(ag.square(t - tg)), 1.0 / n)


def pose3d_loss(pred, gt) -> Tensor:
    """Squared 3D joint error, averaged over samples and joints."""
    pred, gt = _flat(pred, 3), _flat(gt, 3)
    _same(pred, gt, "pose3d_loss")
    n, j = pred.shape[0], pred.shape[1] // 3
    return ag.scale(ag.tsum(ag.square(pred - gt)), 1.0 / (n * j))


def _weighted(components: dict, weights: dict, allowed: Sequence[str], kind: str) -> Tensor | float:
    extra = [k for k, v in components.items() if v is not None and k not in allowed]
    if extra:
        raise ComponentKindMismatch(f"{kind} batch cannot carry {', '.join(extra)} loss")
    total = 0.0
    for name in allowed:
        v = components.get(name)
        if v is not None:
            total = total + weights[name] * v
    return total


def paired_total(components: dict, w: LossWeights = LossWeights()):
    """Weighted sum for a batch with 2D, 3D and camera ground truth."""
    return _weighted(components, {"ref": w.ref_paired, "cam": w.cam, "reproj": w.reproj_paired,
                                  "pose3d": w.pose3d}, PAIRED_COMPONENTS, "paired")


def weak_total(components: dict, w: LossWeights = LossWeights()):
    """Weighted sum for a 2D-only batch; any 3D or camera term is rejected."""
    return _weighted(components, {"ref": w.ref_weak, "reproj": w.reproj_weak}, WEAK_COMPONENTS, "weak")


def report(kind: str, batch_size: int, components: dict, total) -> BatchLossReport:
    vals = {k: (None if v is None else float(np.asarray(getattr(v, "data", v)))) for k, v in components.items()}
    return BatchLossReport(kind=kind, batch_size=batch_size,
                           total=float(np.asarray(getattr(total, "data", total))), **vals)


def lsgan_discriminator_loss(real_scores, fake_scores) -> Tensor:
    r, f = ag.as_tensor(real_scores), ag.as_tensor(fake_scores)
    if r.data.size == 0 or f.data.size == 0:
        raise EmptyPool("discriminator needs non-empty real and fake pools")
    return ag.scale(ag.mean(ag.square(r - 1.0)), 0.5) + ag.scale(ag.mean(ag.square(f)), 0.5)


def lsgan_generator_loss(fake_scores) -> Tensor:
    f = ag.as_tensor(fake_scores)
    if f.data.size == 0:
        raise EmptyPool("generator loss needs a non-empty fake pool")
    return ag.scale(ag.mean(ag.square(f - 1.0)), 0.5)


def _pool(p) -> Tensor:
    if isinstance(p, (list, tuple)):
        parts = [ag.as_tensor(x) for x in p if ag.as_tensor(x).shape[0] > 0]
        if not parts:
            raise EmptyPool("empty pose pool")
        return parts[0] if len(parts) == 1 else ag.concat(parts, axis=0)
    t = ag.as_tensor(p)
    if t.shape[0] == 0:
        raise EmptyPool("empty pose pool")
    return t


def lsgan_losses(d2d: Callable, d3d: Callable, real2d, real3d, fake2d, fake3d):
    """Least-squares GAN losses for the 2D and 3D discriminators.

    ``fake2d`` may be a list mixing augmented 2D poses and reprojections of
    2D-only samples.  Returns ``(dis_2d, dis_3d, gen)`` where the
    discriminator losses use targets 1 (real) / 0 (fake) and the generator
    loss pushes every fake towards 1.
    """
    s_r2, s_f2 = d2d(_pool(real2d)), d2d(_pool(fake2d))
    s_r3, s_f3 = d3d(_pool(real3d)), d3d(_pool(fake3d))
    dis2 = lsgan_discriminator_loss(s_r2, s_f2)
    dis3 = lsgan_discriminator_loss(s_r3, s_f3)
    gen = lsgan_generator_loss(s_f2) + lsgan_generator_loss(s_f3)
    return dis2, dis3, gen
