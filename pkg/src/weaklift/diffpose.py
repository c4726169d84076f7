"""Differentiable batched pose operations on flat joint-major tensors.

A batch of 3D poses is an ``(N, 3 * J)`` tensor laid out as
``[x0, y0, z0, x1, ...]``; 2D poses are ``(N, 2 * J)``; per-bone triples are
``(N, 3 * B)``.  Everything reduces to rank-2 autograd ops with constant
gather indices and constant matrices built once per tree.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .skeleton import PARTS, SKELETON, KinematicTree


@lru_cache(maxsize=None)
def _bone_matrix(tree: KinematicTree, dim: int) -> np.ndarray:
    return np.kron(tree.incidence(), np.eye(dim))


@lru_cache(maxsize=None)
def _joint_matrix(tree: KinematicTree, dim: int) -> np.ndarray:
    return np.kron(tree.accumulation(), np.eye(dim))


@lru_cache(maxsize=None)
def _kcs_plan(tree: KinematicTree, dim: int):
    plan = []
    for part in PARTS:
        idx = tree.part_bones(part)
        left, right = [], []
        for k in idx:
            for l in idx:
                for d in range(dim):
                    left.append(dim * k + d)
                    right.append(dim * l + d)
        summer = np.kron(np.eye(len(idx) ** 2), np.ones((dim, 1)))
        plan.append((np.array(left), np.array(right), summer))
    return plan


def bones(poses: Tensor, dim: int = 3, tree: KinematicTree = SKELETON) -> Tensor:
    return ag.matmul(poses, _bone_matrix(tree, dim))


def joints_from_bones(b: Tensor, dim: int = 3, tree: KinematicTree = SKELETON) -> Tensor:
    """Root-at-origin joints obtained by summing bones along each root path."""
    return ag.matmul(b, _joint_matrix(tree, dim))


def kcs_blocks(poses: Tensor, dim: int = 3, tree: KinematicTree = SKELETON) -> list[Tensor]:
    """Flattened per-part KCS blocks, one ``(N, |part|^2)`` tensor per part."""
    b = bones(poses, dim, tree)
    out = []
    for left, right, summer in _kcs_plan(tree, dim):
        prod = ag.take_cols(b, left) * ag.take_cols(b, right)
        out.append(ag.matmul(prod, summer))
    return out


def split_coords(x: Tensor, dim: int) -> list[Tensor]:
    n = x.shape[1] // dim
    return [ag.take_cols(x, np.arange(n) * dim + d) for d in range(dim)]


def interleave(parts: list[Tensor]) -> Tensor:
    """Inverse of :func:`split_coords`."""
    dim = len(parts)
    n = parts[0].shape[1]
    order = (np.arange(dim)[None, :] * n + np.arange(n)[:, None]).ravel()
    return ag.take_cols(ag.concat(parts, axis=1), order)


def project(poses: Tensor, intrinsics: Tensor, offset: Tensor, eps_depth: float) -> Tensor:
    """Perspective projection of ``poses + offset`` (batched).

    ``intrinsics`` is ``(N, 4)`` as ``[fx, fy, cx, cy]``, ``offset`` is
    ``(N, 3)``.  Depths below ``eps_depth`` are clamped, which zeroes their
    gradient; callers that must reject such inputs check depth first.
    """
    xs, ys, zs = split_coords(poses, 3)
    fx, fy, cx, cy = (intrinsics[:, i:i + 1] for i in range(4))
    tx, ty, tz = (offset[:, i:i + 1] for i in range(3))
    inv = ag.reciprocal(zs + tz, eps=eps_depth)
    u = fx * (xs + tx) * inv + cx
    v = fy * (ys + ty) * inv + cy
    return interleave([u, v])


def depths(poses: np.ndarray, offset: np.ndarray) -> np.ndarray:
    return poses[:, 2::3] + offset[:, 2:3]


@lru_cache(maxsize=None)
def _triple_sum(m: int) -> np.ndarray:
    return np.kron(np.eye(m), np.ones((3, 1)))


@lru_cache(maxsize=None)
def _triple_expand(m: int) -> np.ndarray:
    return np.kron(np.eye(m), np.ones((1, 3)))


def cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = split_coords(a, 3)
    bx, by, bz = split_coords(b, 3)
    return interleave([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx])


def rotate(w: Tensor, v: Tensor) -> Tensor:
    """Rotate every triple of ``v`` by the matching axis-angle triple of ``w``."""
    m = v.shape[1] // 3
    s = ag.matmul(ag.square(w), _triple_sum(m))
    a = ag.matmul(ag.sin_over_root(s), _triple_expand(m))
    b = ag.matmul(ag.one_minus_cos_over_sq(s), _triple_expand(m))
    wv = cross(w, v)
    return v + a * wv + b * cross(w, wv)


@lru_cache(maxsize=None)
def _ancestor_plan(tree: KinematicTree) -> list[np.ndarray]:
    chains = [tree.ancestors(k) for k in range(tree.num_bones)]
    depth = max(len(c) for c in chains)
    zero = tree.num_bones  # index of the padded zero rotation
    plan = []
    for s in range(depth):
        cols = []
        for c in chains:
            k = c[s] if s < len(c) else zero
            cols.extend([3 * k, 3 * k + 1, 3 * k + 2])
        plan.append(np.array(cols))
    return plan


def rotate_bones(b: Tensor, w: Tensor, tree: KinematicTree = SKELETON) -> Tensor:
    """Apply per-bone axis-angles with descendants following their ancestors.

    Bone ``k`` becomes ``R_a1 ... R_ap R_k b_k`` for its ancestor chain
    ``a1`` (root-most) to ``ap``: each rotation is expressed in the input
    pose's frame and carries the whole subtree below it.
    """
    n = b.shape[0]
    padded = ag.concat([w, Tensor(np.zeros((n, 3)))], axis=1)
    out = b
    for cols in _ancestor_plan(tree):
        out = rotate(ag.take_cols(padded, cols), out)
    return out


def scale_bones(b: Tensor, log_scale: Tensor) -> Tensor:
    m = b.shape[1] // 3
    return b * ag.matmul(ag.exp(log_scale), _triple_expand(m))


def rotate_poses(poses: Tensor, w: Tensor) -> Tensor:
    """Rotate all joints of each pose about the origin by one axis-angle per pose."""
    j = poses.shape[1] // 3
    return rotate(ag.take_cols(w, np.tile(np.arange(3), j)), poses)
