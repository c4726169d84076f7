"""Pose augmentation: bone angle, then bone length, then a rigid view change.

The batched path (:func:`augment_batch`) is differentiable with respect to
the generator output and is what training uses.  The numpy helpers work on
millimetre poses for inspection, tests and dataset dumps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffpose as dp
from .autograd import Tensor
from .data import CameraParams, SampleRecord
from .errors import BehindCamera, DegenerateBone, ShapeMismatch
from .geometry import EPS_DEPTH_MM, Offset3D
from .geometry import project as project_np
from .nets import GeneratorOutput, ModelConfig
from .skeleton import NUM_BONES, NUM_JOINTS, SKELETON, KinematicTree, bone_lengths

MIN_BONE_MM = 1e-6


@dataclass
class AugmentedBatch:
    poses3d: Tensor      # (M, 48) root-relative, meters
    poses2d: Tensor      # (M, 32) normalized, projected through the source camera
    intrinsics: np.ndarray  # (M, 4) source intrinsics, unchanged
    offset: Tensor       # (M, 3) meters, source offset plus the rigid shift
    valid: np.ndarray    # (N,) bool; rows kept from the input batch

    @property
    def rejected(self) -> int:
        return int((~self.valid).sum())


def rigid_offset(offset: Tensor, gen: GeneratorOutput) -> Tensor:
    """Fold the rigid translation into the root offset.

    The generator's depth is centred on ``depth_mid`` so that its identity
    output leaves the source offset unchanged.
    """
    return offset + gen.shift - Tensor(np.array([[0.0, 0.0, gen.depth_mid]]))


def transform_poses(poses: Tensor, gen: GeneratorOutput, tree: KinematicTree = SKELETON) -> Tensor:
    """Root-relative ``R (length(angle(X)))`` for a (N, 48) batch."""
    b = dp.bones(poses, 3, tree)
    b = dp.rotate_bones(b, gen.bone_angle, tree)
    b = dp.scale_bones(b, gen.bone_log_scale)
    return dp.rotate_poses(dp.joints_from_bones(b, 3, tree), gen.view)


def augment_batch(poses: Tensor, intrinsics: np.ndarray, offset, gen: GeneratorOutput,
                  eps_depth: float = EPS_DEPTH_MM / 1000.0, max_abs_2d: float | None = None,
                  tree: KinematicTree = SKELETON) -> AugmentedBatch:
    """Augment a batch of paired poses (meters) and reproject with the source intrinsics.

    Rows with a joint at depth <= ``eps_depth`` (or, if given, a projected
    coordinate beyond ``max_abs_2d``) are dropped.
    """
    if poses.shape[1] != 3 * NUM_JOINTS:
        raise ShapeMismatch("augment_batch poses", poses.shape)
    x3 = transform_poses(poses, gen, tree)
    off = rigid_offset(Tensor(offset) if not isinstance(offset, Tensor) else offset, gen)
    d = dp.depths(x3.data, off.data)
    valid = np.all(d > eps_depth, axis=1)
    intr = Tensor(intrinsics)
    x2 = dp.project(x3, intr, off, eps_depth)
    if max_abs_2d is not None:
        valid &= np.all(np.abs(x2.data) <= max_abs_2d, axis=1)
    if valid.all():
        return AugmentedBatch(x3, x2, np.asarray(intrinsics), off, valid)
    rows = np.flatnonzero(valid)
    return AugmentedBatch(x3[rows], x2[rows], np.asarray(intrinsics)[rows], off[rows], valid)


def _as_batch(pose: np.ndarray) -> tuple[np.ndarray, bool]:
    p = np.asarray(pose, dtype=float)
    single = p.ndim == 2
    p = p[None] if single else p
    if p.shape[1:] != (NUM_JOINTS, 3):
        raise ShapeMismatch("expected (16, 3) or (N, 16, 3) pose", p.shape)
    return p, single


def _check_bones(p: np.ndarray, tree: KinematicTree):
    if np.any(bone_lengths(p, tree) < MIN_BONE_MM):
        raise DegenerateBone(f"source bone shorter than {MIN_BONE_MM} mm")


def _bone_op(pose, fn, tree):
    p, single = _as_batch(pose)
    _check_bones(p, tree)
    n = len(p)
    b = dp.bones(Tensor(p.reshape(n, -1)), 3, tree)
    out = dp.joints_from_bones(fn(b), 3, tree).data.reshape(n, NUM_JOINTS, 3)
    return out[0] if single else out


def apply_bone_angle(pose: np.ndarray, gamma: np.ndarray, tree: KinematicTree = SKELETON) -> np.ndarray:
    """Rotate each bone by its axis-angle ``gamma`` (15, 3); descendants follow."""
    p, _ = _as_batch(pose)
    g = np.broadcast_to(np.asarray(gamma, float).reshape(-1, NUM_BONES * 3), (len(p), NUM_BONES * 3))
    return _bone_op(pose, lambda b: dp.rotate_bones(b, Tensor(g), tree), tree)


def apply_bone_length(pose: np.ndarray, gamma: np.ndarray, tree: KinematicTree = SKELETON) -> np.ndarray:
    """Scale bone ``k`` by ``exp(gamma[k])``, keeping its direction."""
    p, _ = _as_batch(pose)
    g = np.broadcast_to(np.asarray(gamma, float).reshape(-1, NUM_BONES), (len(p), NUM_BONES))
    return _bone_op(pose, lambda b: dp.scale_bones(b, Tensor(g)), tree)


@dataclass(frozen=True)
class AugmentedPair:
    pose3d_mm: np.ndarray   # (16, 3) root-relative
    pose2d_px: np.ndarray   # (16, 2)
    camera: CameraParams    # source intrinsics, offset with the rigid shift folded in
    image_wh: tuple[float, float]
    source_id: str
    noise_seed: int | None = None

    def to_record(self, rid: str | None = None) -> SampleRecord:
        return SampleRecord(id=rid or f"{self.source_id}+aug", joints2d_px=self.pose2d_px,
                            conf=np.ones(NUM_JOINTS), image_wh=self.image_wh,
                            joints3d_mm=self.pose3d_mm, camera=self.camera, source_tag="augmented",
                            extra={"source_id": self.source_id, "noise_seed": self.noise_seed})


def augment_pair(sample: SampleRecord, gen: GeneratorOutput, noise_seed: int | None = None,
                 tree: KinematicTree = SKELETON) -> AugmentedPair:
    """Apply a single-row generator output to a paired record (all in mm)."""
    if not sample.is_paired:
        raise ValueError(f"record {sample.id} has no 3D pose and camera")
    x = sample.joints3d_mm
    _check_bones(x[None], tree)
    ang = gen.bone_angle.data.reshape(NUM_BONES, 3)
    scl = gen.bone_log_scale.data.reshape(NUM_BONES)
    x3 = apply_bone_length(apply_bone_angle(x, ang, tree), scl, tree)
    x3 = dp.rotate_poses(Tensor(x3.reshape(1, -1)), Tensor(gen.view.data.reshape(1, 3))).data
    x3 = x3.reshape(NUM_JOINTS, 3)
    t = sample.camera.offset.as_array() + 1000.0 * (gen.shift.data.reshape(3) - [0.0, 0.0, gen.depth_mid])
    offset = Offset3D(*t)
    px = project_np(x3, sample.camera.intrinsics, offset)  # raises BehindCamera
    return AugmentedPair(x3, px, CameraParams(sample.camera.intrinsics, offset), sample.image_wh,
                         sample.id, noise_seed)


def random_generator_output(n: int, cfg: ModelConfig, rng: np.random.Generator) -> GeneratorOutput:
    """Generator-shaped parameters drawn uniformly inside the generator's bounds."""
    def u(*shape):
        return rng.uniform(-1.0, 1.0, size=(n, *shape))

    lo, hi = (v / 1000.0 for v in cfg.gen_tz_range_mm)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    shift = np.concatenate([u(2) * cfg.max_shift_mm / 1000.0, mid + half * u(1)], axis=1)
    return GeneratorOutput(Tensor(u(3 * NUM_BONES) * cfg.max_bone_angle / np.sqrt(3)),
                           Tensor(u(NUM_BONES) * cfg.max_log_scale),
                           Tensor(u(3) * cfg.max_view_angle / np.sqrt(3)), Tensor(shift), mid)


def augment_records(records, gen: GeneratorOutput, seeds=None) -> tuple[list[AugmentedPair], int]:
    """Row ``i`` of ``gen`` applied to ``records[i]``; returns pairs and the rejection count."""
    pairs, rejected = [], 0
    for i, r in enumerate(records):
        row = GeneratorOutput(gen.bone_angle[i:i + 1], gen.bone_log_scale[i:i + 1], gen.view[i:i + 1],
                              gen.shift[i:i + 1], gen.depth_mid)
        try:
            pairs.append(augment_pair(r, row, None if seeds is None else int(seeds[i])))
        except BehindCamera:
            rejected += 1
    return pairs, rejected
