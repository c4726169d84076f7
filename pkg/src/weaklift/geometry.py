"""Pinhole projection, rigid transforms and Procrustes alignment (numpy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateConfiguration

EPS_DEPTH_MM = 1.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)):
            raise ValueError("camera intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])


@dataclass(frozen=True)
class Offset3D:
    tx: float
    ty: float
    tz: float

    def __post_init__(self):
        if not all(np.isfinite((self.tx, self.ty, self.tz))):
            raise ValueError("offset must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))


def axis_angle_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula; accepts (..., 3) rotation vectors."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    k = np.zeros(w.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -w[..., 2], w[..., 1]
    k[..., 1, 0], k[..., 1, 2] = w[..., 2], -w[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -w[..., 1], w[..., 0]
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * k + b * (k @ k)


def project(pose: np.ndarray, K: CameraIntrinsics, t: Offset3D, eps_depth: float = EPS_DEPTH_MM) -> np.ndarray:
    """Perspective projection of camera-space joints ``pose + t``.

    ``pose`` is (..., J, 3); the result is (..., J, 2) in whatever 2D
    convention the intrinsics are expressed in.
    """
    p = np.asarray(pose, dtype=float) + t.as_array()
    depth = p[..., 2]
    if np.any(~(depth > eps_depth)):
        bad = np.argwhere(~(depth > eps_depth))[0]
        raise BehindCamera(f"joint {tuple(bad)} at depth {depth[tuple(bad)]:.3f} <= {eps_depth}")
    u = K.fx * p[..., 0] / depth + K.cx
    v = K.fy * p[..., 1] / depth + K.cy
    return np.stack([u, v], axis=-1)


def apply_rigid(pose: np.ndarray, T: RigidTransform) -> np.ndarray:
    return np.asarray(pose, dtype=float) @ T.rotation.T + T.translation


@dataclass(frozen=True)
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, pose: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(pose) @ self.rotation.T + self.translation


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, Similarity]:
    """Similarity transform of ``pred`` minimising squared distance to ``gt``.

    Umeyama's closed form: centre both sets, SVD of the cross-covariance with a
    determinant correction against reflections, then the optimal scale.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching (J, 3) arrays, got {pred.shape} and {gt.shape}")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    pc, gc = pred - mu_p, gt - mu_g
    var_p = np.sum(pc**2)
    m = pc.T @ gc
    u, s, vt = np.linalg.svd(m)
    if var_p <= 0 or s[0] <= 0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("cross-covariance has rank < 2 (collinear or coincident joints)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    corr = np.array([1.0, 1.0, d])
    rot = vt.T @ np.diag(corr) @ u.T
    scale = float(np.sum(s * corr) / var_p)
    trans = mu_g - scale * rot @ mu_p
    sim = Similarity(scale, rot, trans)
    return sim.apply(pred), sim
