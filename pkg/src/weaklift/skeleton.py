"""Canonical 16-joint skeleton, kinematic tree, KCS and 2D coordinate helpers.

Joint codes follow the Human3.6M-style 16 joint layout used throughout the
package.  Every parent has a smaller code than its children, so iterating
joints in code order visits the tree root-outward, and bone ``k`` always
ends at joint ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

from .errors import InvalidImageDims, MissingRequiredJoints


class JointId(IntEnum):
    Pelvis = 0
    RHip = 1
    RKnee = 2
    RAnkle = 3
    LHip = 4
    LKnee = 5
    LAnkle = 6
    Spine = 7
    Neck = 8
    Head = 9
    LShoulder = 10
    LElbow = 11
    LWrist = 12
    RShoulder = 13
    RElbow = 14
    RWrist = 15


NUM_JOINTS = len(JointId)
NUM_BONES = NUM_JOINTS - 1
ROOT = JointId.Pelvis

PARTS = ("torso", "left-arm", "right-arm", "left-leg", "right-leg")

J = JointId
_PARENT = {
    J.RHip: J.Pelvis, J.RKnee: J.RHip, J.RAnkle: J.RKnee,
    J.LHip: J.Pelvis, J.LKnee: J.LHip, J.LAnkle: J.LKnee,
    J.Spine: J.Pelvis, J.Neck: J.Spine, J.Head: J.Neck,
    J.LShoulder: J.Neck, J.LElbow: J.LShoulder, J.LWrist: J.LElbow,
    J.RShoulder: J.Neck, J.RElbow: J.RShoulder, J.RWrist: J.RElbow,
}
_PART_OF_CHILD = {
    J.Spine: "torso", J.Neck: "torso", J.Head: "torso",
    J.LHip: "torso", J.RHip: "torso", J.LShoulder: "torso", J.RShoulder: "torso",
    J.LElbow: "left-arm", J.LWrist: "left-arm",
    J.RElbow: "right-arm", J.RWrist: "right-arm",
    J.LKnee: "left-leg", J.LAnkle: "left-leg",
    J.RKnee: "right-leg", J.RAnkle: "right-leg",
}
del J


@dataclass(frozen=True)
class KinematicTree:
    """Parent table, bone enumeration and part labels of a skeleton.

    ``parents[j]`` is the parent code of joint ``j`` (-1 for the root).
    Bone ``k`` runs from ``parents[children[k]]`` to ``children[k]``.
    """

    parents: tuple[int, ...]
    children: tuple[int, ...]
    part_of_bone: tuple[str, ...]

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_bones(self) -> int:
        return len(self.children)

    def bone_parent(self, k: int) -> int:
        return self.parents[self.children[k]]

    def part_bones(self, part: str) -> list[int]:
        return [k for k, p in enumerate(self.part_of_bone) if p == part]

    def parent_bone(self, k: int) -> int:
        """Index of the bone ending at this bone's start joint, or -1."""
        start = self.bone_parent(k)
        return self.children.index(start) if start in self.children else -1

    def ancestors(self, k: int) -> list[int]:
        """Bones from ``k`` up to the root, ``k`` first."""
        chain = []
        while k >= 0:
            chain.append(k)
            k = self.parent_bone(k)
        return chain

    def incidence(self) -> np.ndarray:
        """Matrix ``A`` (joints x bones) with ``bones = A.T @ joints``."""
        a = np.zeros((self.num_joints, self.num_bones))
        for k, c in enumerate(self.children):
            a[c, k] = 1.0
            a[self.parents[c], k] = -1.0
        return a

    def accumulation(self) -> np.ndarray:
        """Matrix ``M`` (bones x joints): joint j = sum of bones on its root path."""
        m = np.zeros((self.num_bones, self.num_joints))
        for j in range(self.num_joints):
            if j in self.children:
                for k in self.ancestors(self.children.index(j)):
                    m[k, j] = 1.0
        return m

    def validate(self) -> None:
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ValueError("tree must have exactly one root")
        for j in range(self.num_joints):
            seen = set()
            while j >= 0:
                if j in seen:
                    raise ValueError("cycle in parent relation")
                seen.add(j)
                j = self.parents[j]
        if sorted(self.children) != [j for j in range(self.num_joints) if self.parents[j] >= 0]:
            raise ValueError("bones must cover every non-root joint once")
        if any(p not in PARTS for p in self.part_of_bone):
            raise ValueError("unknown part label")


def _default_tree() -> KinematicTree:
    parents = tuple(-1 if j == ROOT else int(_PARENT[j]) for j in JointId)
    children = tuple(int(j) for j in JointId if j != ROOT)
    parts = tuple(_PART_OF_CHILD[JointId(c)] for c in children)
    tree = KinematicTree(parents, children, parts)
    tree.validate()
    return tree


SKELETON = _default_tree()

# Joints mirrored left<->right, as a permutation of codes.
MIRROR = np.array([JointId[{"L": "R", "R": "L"}[n[0]] + n[1:]] if n[0] in "LR" else j
                   for n, j in JointId.__members__.items()], dtype=int)


def bone_vectors(pose: np.ndarray, tree: KinematicTree = SKELETON) -> np.ndarray:
    """Child minus parent coordinates for every bone, in bone order."""
    pose = np.asarray(pose, dtype=float)
    children = np.asarray(tree.children)
    parents = np.asarray([tree.parents[c] for c in tree.children])
    return pose[..., children, :] - pose[..., parents, :]


def bone_lengths(pose: np.ndarray, tree: KinematicTree = SKELETON) -> np.ndarray:
    return np.linalg.norm(bone_vectors(pose, tree), axis=-1)


@dataclass(frozen=True)
class KcsMatrix:
    full: np.ndarray
    blocks: dict[str, np.ndarray] = field(default_factory=dict)

    def flat_blocks(self) -> np.ndarray:
        return np.concatenate([self.blocks[p].ravel() for p in PARTS])


def kcs(pose: np.ndarray, tree: KinematicTree = SKELETON) -> KcsMatrix:
    """Kinematic Chain Space Gram matrix ``B @ B.T`` of the bone vectors.

    Rows of ``B`` are bones, so entry ``(k, l)`` is the dot product of bones
    ``k`` and ``l`` and the diagonal holds squared bone lengths.
    """
    b = bone_vectors(pose, tree)
    full = b @ b.T
    blocks = {}
    for part in PARTS:
        idx = tree.part_bones(part)
        blocks[part] = full[np.ix_(idx, idx)]
    return KcsMatrix(full, blocks)


# Source-scheme joint names mapped onto canonical joints.  Anything not listed
# is dropped on conversion.
_SCHEMES: dict[str, dict[str, JointId]] = {
    "h36m": {j.name.lower(): j for j in JointId},
    "mpii": {
        "r_ankle": JointId.RAnkle, "r_knee": JointId.RKnee, "r_hip": JointId.RHip,
        "l_hip": JointId.LHip, "l_knee": JointId.LKnee, "l_ankle": JointId.LAnkle,
        "pelvis": JointId.Pelvis, "thorax": JointId.Neck, "head_top": JointId.Head,
        "r_wrist": JointId.RWrist, "r_elbow": JointId.RElbow, "r_shoulder": JointId.RShoulder,
        "l_shoulder": JointId.LShoulder, "l_elbow": JointId.LElbow, "l_wrist": JointId.LWrist,
    },
    "coco": {
        "left_shoulder": JointId.LShoulder, "right_shoulder": JointId.RShoulder,
        "left_elbow": JointId.LElbow, "right_elbow": JointId.RElbow,
        "left_wrist": JointId.LWrist, "right_wrist": JointId.RWrist,
        "left_hip": JointId.LHip, "right_hip": JointId.RHip,
        "left_knee": JointId.LKnee, "right_knee": JointId.RKnee,
        "left_ankle": JointId.LAnkle, "right_ankle": JointId.RAnkle,
    },
}

SCHEMES = tuple(_SCHEMES)

# (target, (a, b)): target = midpoint of a and b, applied in this order when
# the target is absent and both sources are valid.
INTERPOLATION_TABLE = (
    (JointId.Pelvis, (JointId.LHip, JointId.RHip)),
    (JointId.Neck, (JointId.LShoulder, JointId.RShoulder)),
    (JointId.Spine, (JointId.Pelvis, JointId.Neck)),
)

_REQUIRED = (JointId.LHip, JointId.RHip, JointId.LShoulder, JointId.RShoulder)


def convert_external_joints(joints: Mapping[str, object], scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Map named 2D points from another annotation scheme onto the 16 joints.

    ``joints`` maps source joint names to ``(x, y)`` or ``None`` for an
    unlabelled joint.  Returns the (16, 2) coordinates and a boolean validity
    mask; invalid joints carry zeros.

    Raises
    ------
    MissingRequiredJoints
        If either hip or either shoulder is absent.
    """
    try:
        table = _SCHEMES[scheme.lower()]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}") from None
    coords = np.zeros((NUM_JOINTS, 2))
    valid = np.zeros(NUM_JOINTS, dtype=bool)
    for name, point in joints.items():
        target = table.get(name.lower())
        if target is None or point is None:
            continue
        p = np.asarray(point, dtype=float)
        if p.shape != (2,) or not np.all(np.isfinite(p)):
            continue
        coords[target] = p
        valid[target] = True

    missing = [j.name for j in _REQUIRED if not valid[j]]
    if missing:
        raise MissingRequiredJoints(f"source lacks required joints: {', '.join(missing)}")

    for target, (a, b) in INTERPOLATION_TABLE:
        if not valid[target] and valid[a] and valid[b]:
            coords[target] = 0.5 * (coords[a] + coords[b])
            valid[target] = True
    return coords, valid


def _check_dims(width, height):
    if not (width > 0 and height > 0):
        raise InvalidImageDims(f"image dims must be positive, got {width}x{height}")


def normalize_2d(pixels: np.ndarray, width: float, height: float) -> np.ndarray:
    """Pixel coordinates to (-1, 1) normalized coordinates."""
    _check_dims(width, height)
    p = np.asarray(pixels, dtype=float)
    scale = np.array([width, height], dtype=float)
    return 2.0 * p / scale - 1.0


def denormalize_2d(coords: np.ndarray, width: float, height: float) -> np.ndarray:
    _check_dims(width, height)
    c = np.asarray(coords, dtype=float)
    scale = np.array([width, height], dtype=float)
    return (c + 1.0) * scale / 2.0
