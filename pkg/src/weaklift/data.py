"""Sample records, the line-delimited dataset format, synthetic data and batching.

File format
-----------
UTF-8 text, one JSON object per line.  Line 1 is a header
``{"format": "weaklift-dataset", "format_version": 1}``; every further line
is one record with the fields of :class:`SampleRecord`:

============== ============================================================
field          content
============== ============================================================
id             string, unique within the file
joints2d_px    16 x 2 list, pixels, joint order of ``JointId``
conf           16 floats in [0, 1]
image_wh       [width, height] in pixels, both > 0
joints3d_mm    16 x 3 list (root-relative, mm) or null
camera         {"f_x", "f_y", "c_x", "c_y" (px), "t_x", "t_y", "t_z" (mm)} or null
source_tag     free string
============== ============================================================

Paired records carry both ``joints3d_mm`` and ``camera``; 2D-only records
carry neither.  Any other keys are kept verbatim and written back out.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, EmptyDataset, InvariantViolation, ParseError
from .geometry import CameraIntrinsics, Offset3D, axis_angle_to_matrix
from .geometry import project as project_np
from .skeleton import NUM_BONES, NUM_JOINTS, SKELETON, normalize_2d

DATASET_FORMAT = "weaklift-dataset"
DATASET_VERSION = 1
RECORD_FIELDS = ("id", "joints2d_px", "conf", "image_wh", "joints3d_mm", "camera", "source_tag")
CAMERA_KEYS = ("f_x", "f_y", "c_x", "c_y", "t_x", "t_y", "t_z")


@dataclass(frozen=True)
class CameraParams:
    intrinsics: CameraIntrinsics
    offset: Offset3D

    def to_dict(self) -> dict:
        k, t = self.intrinsics, self.offset
        return dict(zip(CAMERA_KEYS, (k.fx, k.fy, k.cx, k.cy, t.tx, t.ty, t.tz)))

    @classmethod
    def from_dict(cls, d: dict) -> CameraParams:
        v = [float(d[k]) for k in CAMERA_KEYS]
        return cls(CameraIntrinsics(*v[:4]), Offset3D(*v[4:]))


def _frozen(a, shape, what, rid):
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise InvariantViolation(rid, f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(rid, f"{what} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampleRecord:
    id: str
    joints2d_px: np.ndarray
    conf: np.ndarray
    image_wh: tuple[float, float]
    joints3d_mm: np.ndarray | None = None
    camera: CameraParams | None = None
    source_tag: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        rid = self.id
        set_ = object.__setattr__
        set_(self, "joints2d_px", _frozen(self.joints2d_px, (NUM_JOINTS, 2), "joints2d_px", rid))
        conf = _frozen(self.conf, (NUM_JOINTS,), "conf", rid)
        if np.any(conf < 0) or np.any(conf > 1):
            raise InvariantViolation(rid, "conf entries must lie in [0, 1]")
        set_(self, "conf", conf)
        w, h = (float(v) for v in self.image_wh)
        if not (w > 0 and h > 0):
            raise InvariantViolation(rid, f"image_wh must be positive, got {self.image_wh}")
        set_(self, "image_wh", (w, h))
        if (self.joints3d_mm is None) != (self.camera is None):
            raise InvariantViolation(rid, "paired records need both joints3d_mm and camera; weak records neither")
        if self.joints3d_mm is not None:
            j3 = _frozen(self.joints3d_mm, (NUM_JOINTS, 3), "joints3d_mm", rid)
            if np.any(np.abs(j3[0]) > 1e-9):
                raise InvariantViolation(rid, "joints3d_mm must be root-relative (Pelvis at origin)")
            set_(self, "joints3d_mm", j3)

    @property
    def is_paired(self) -> bool:
        return self.joints3d_mm is not None

    def joints2d_norm(self) -> np.ndarray:
        return normalize_2d(self.joints2d_px, *self.image_wh)

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return record_to_dict(self) == record_to_dict(other)

    __hash__ = None


def record_to_dict(r: SampleRecord) -> dict:
    d = {
        "id": r.id,
        "joints2d_px": r.joints2d_px.tolist(),
        "conf": r.conf.tolist(),
        "image_wh": list(r.image_wh),
        "joints3d_mm": None if r.joints3d_mm is None else r.joints3d_mm.tolist(),
        "camera": None if r.camera is None else r.camera.to_dict(),
        "source_tag": r.source_tag,
    }
    d.update(r.extra)
    return d


def record_from_dict(d: dict, line: int | None = None) -> SampleRecord:
    def need(key):
        if key not in d:
            raise ParseError(line, key, "missing")
        return d[key]

    rid = need("id")
    if not isinstance(rid, str):
        raise ParseError(line, "id", "must be a string")
    try:
        cam = d.get("camera")
        cam = None if cam is None else CameraParams.from_dict(cam)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(line, "camera", str(e)) from None
    for key in ("joints2d_px", "conf", "image_wh"):
        need(key)
    for key in ("joints2d_px", "conf", "image_wh", "joints3d_mm"):
        val = d.get(key)
        if val is None:
            continue
        try:
            np.array(val, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ParseError(line, key, str(e)) from None
    extra = {k: v for k, v in d.items() if k not in RECORD_FIELDS}
    return SampleRecord(id=rid, joints2d_px=d["joints2d_px"], conf=d["conf"], image_wh=tuple(d["image_wh"]),
                        joints3d_mm=d.get("joints3d_mm"), camera=cam,
                        source_tag=str(d.get("source_tag", "")), extra=extra)


def write_dataset(records: Iterable[SampleRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps({"format": DATASET_FORMAT, "format_version": DATASET_VERSION}) + "\n")
        for r in records:
            f.write(json.dumps(record_to_dict(r)) + "\n")


def read_dataset(path) -> list[SampleRecord]:
    records = []
    header = False
    with open(path, encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise ParseError(lineno, "<json>", e.msg) from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "<json>", "expected an object")
            if not header:
                if obj.get("format") != DATASET_FORMAT:
                    raise ParseError(lineno, "format", f"expected a {DATASET_FORMAT!r} header")
                if obj.get("format_version") != DATASET_VERSION:
                    raise ParseError(lineno, "format_version", f"unsupported {obj.get('format_version')!r}")
                header = True
                continue
            records.append(record_from_dict(obj, lineno))
    if not header:
        raise ParseError(1, "format", "missing header")
    return records


# ---------------------------------------------------------------------------
# camera unit conversions

def camera_to_internal(cam: CameraParams, image_wh) -> tuple[np.ndarray, np.ndarray]:
    """Pixel intrinsics + mm offset -> normalized intrinsics + meter offset."""
    w, h = image_wh
    k, t = cam.intrinsics, cam.offset
    intr = np.array([2 * k.fx / w, 2 * k.fy / h, 2 * k.cx / w - 1, 2 * k.cy / h - 1])
    return intr, t.as_array() / 1000.0


def camera_from_internal(intr: np.ndarray, offset_m: np.ndarray, image_wh) -> CameraParams:
    w, h = image_wh
    fx, fy, cx, cy = intr
    return CameraParams(CameraIntrinsics(fx * w / 2, fy * h / 2, (cx + 1) * w / 2, (cy + 1) * h / 2),
                        Offset3D(*(np.asarray(offset_m) * 1000.0)))


@dataclass
class ArrayBatch:
    """Stacked internal-unit arrays for a list of records."""

    ids: list[str]
    x2d: np.ndarray               # (N, 32) normalized
    conf: np.ndarray              # (N, 16) raw scores
    x3d: np.ndarray | None = None  # (N, 48) meters, root-relative
    intr: np.ndarray | None = None  # (N, 4) normalized intrinsics
    offset: np.ndarray | None = None  # (N, 3) meters

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> ArrayBatch:
        idx = np.asarray(idx)
        pick = (lambda a: None if a is None else a[idx])
        return ArrayBatch([self.ids[i] for i in idx], self.x2d[idx], self.conf[idx],
                          pick(self.x3d), pick(self.intr), pick(self.offset))


def to_arrays(records: Sequence[SampleRecord]) -> ArrayBatch:
    if not records:
        raise EmptyDataset("no records")
    n = len(records)
    x2d = np.stack([r.joints2d_norm().reshape(-1) for r in records])
    conf = np.stack([r.conf for r in records])
    if all(r.is_paired for r in records):
        x3d = np.stack([r.joints3d_mm.reshape(-1) / 1000.0 for r in records])
        cams = [camera_to_internal(r.camera, r.image_wh) for r in records]
        intr = np.stack([c[0] for c in cams])
        off = np.stack([c[1] for c in cams])
        return ArrayBatch([r.id for r in records], x2d, conf, x3d, intr, off)
    return ArrayBatch([r.id for r in records], x2d.reshape(n, -1), conf)


# ---------------------------------------------------------------------------
# synthetic data

# Rest pose: unit direction of each bone (camera frame, y down, subject facing
# the camera so their left is +x) and its length range in mm.
BONE_TEMPLATE = (
    ((-1, 0, 0), (110, 140)), ((0, 1, 0), (400, 470)), ((0, 1, 0), (390, 460)),
    ((1, 0, 0), (110, 140)), ((0, 1, 0), (400, 470)), ((0, 1, 0), (390, 460)),
    ((0, -1, 0), (210, 250)), ((0, -1, 0), (220, 270)), ((0, -1, 0), (100, 130)),
    ((1, 0, 0), (130, 170)), ((0, 1, 0), (260, 300)), ((0, 1, 0), (230, 270)),
    ((-1, 0, 0), (130, 170)), ((0, 1, 0), (260, 300)), ((0, 1, 0), (230, 270)),
)
# left/right bone pairs share one sampled length per subject
SYMMETRIC_BONES = ((0, 3), (1, 4), (2, 5), (9, 12), (10, 13), (11, 14))

# Per-bone (lo, hi) ranges of the local rotation vector components (rad),
# about the x (lateral), y (vertical) and z (depth) axes of the rest pose.
# Ranges are one-sided where anatomy is: knees bend backward, elbows and hip
# flexion go forward, limbs abduct outward.  Scaling a range widens it in
# the same direction, which is how the out-of-distribution poses are made.
ANGLE_LIMITS = (
    ((-0.05, 0.05), (-0.1, 0.1), (-0.05, 0.05)),    # pelvis -> right hip
    ((-0.9, 0.3), (-0.15, 0.15), (-0.1, 0.4)),      # right thigh
    ((0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)),     # right shin
    ((-0.05, 0.05), (-0.1, 0.1), (-0.05, 0.05)),    # pelvis -> left hip
    ((-0.9, 0.3), (-0.15, 0.15), (-0.4, 0.1)),      # left thigh
    ((0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)),     # left shin
    ((-0.15, 0.4), (-0.2, 0.2), (-0.15, 0.15)),     # spine
    ((-0.1, 0.2), (-0.15, 0.15), (-0.1, 0.1)),      # neck
    ((-0.3, 0.4), (-0.4, 0.4), (-0.2, 0.2)),        # head
    ((-0.1, 0.1), (-0.1, 0.1), (-0.15, 0.15)),      # neck -> left shoulder
    ((-0.9, 0.4), (-0.3, 0.3), (-0.8, 0.1)),        # left upper arm
    ((-1.2, 0.0), (-0.2, 0.2), (-0.1, 0.1)),        # left forearm
    ((-0.1, 0.1), (-0.1, 0.1), (-0.15, 0.15)),      # neck -> right shoulder
    ((-0.9, 0.4), (-0.3, 0.3), (-0.1, 0.8)),        # right upper arm
    ((-1.2, 0.0), (-0.2, 0.2), (-0.1, 0.1)),        # right forearm
)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int
    seed: int
    weak_fraction: float = 0.0
    ood_weak: bool = False
    n_subjects: int = 8
    bone_length_ranges_mm: tuple = tuple(r for _, r in BONE_TEMPLATE)
    angle_limits: tuple = ANGLE_LIMITS
    angle_scale: float = 1.0
    ood_angle_scale: float = 2.5
    yaw_range: tuple[float, float] = (-0.8, 0.8)
    pitch_range: tuple[float, float] = (-0.15, 0.15)
    roll_range: tuple[float, float] = (-0.1, 0.1)
    image_wh: tuple[float, float] = (1000.0, 1000.0)
    focal_range_px: tuple[float, float] = (1000.0, 1300.0)
    principal_jitter_px: float = 20.0
    tx_range_mm: tuple[float, float] = (-400.0, 400.0)
    ty_range_mm: tuple[float, float] = (-200.0, 200.0)
    tz_range_mm: tuple[float, float] = (4000.0, 6000.0)
    noise_sigma: float = 0.0
    conf_floor: float = 0.05
    source_tag: str = "synthetic"

    def validate(self):
        if self.n_samples < 0 or self.n_subjects < 1:
            raise ConfigError("n_samples must be >= 0 and n_subjects >= 1")
        if not 0.0 <= self.weak_fraction <= 1.0:
            raise ConfigError("weak_fraction must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if len(self.bone_length_ranges_mm) != NUM_BONES or len(self.angle_limits) != NUM_BONES:
            raise ConfigError(f"need {NUM_BONES} bone length ranges and angle limits")
        for name in ("yaw_range", "pitch_range", "roll_range", "focal_range_px", "tx_range_mm",
                     "ty_range_mm", "tz_range_mm"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        for lo, hi in self.bone_length_ranges_mm:
            if not 0 < lo <= hi:
                raise ConfigError("bone length ranges must be positive and non-empty")
        lims = np.asarray(self.angle_limits, dtype=float)
        if lims.shape != (NUM_BONES, 3, 2) or np.any(lims[..., 0] > lims[..., 1]):
            raise ConfigError("angle limits must be 15 x 3 non-empty (lo, hi) ranges")
        if self.angle_scale < 0 or self.ood_angle_scale < 0:
            raise ConfigError("angle scales must be >= 0")
        if self.tz_range_mm[0] <= 0 or self.focal_range_px[0] <= 0:
            raise ConfigError("depth and focal ranges must be positive")
        if min(self.image_wh) <= 0:
            raise ConfigError("image_wh must be positive")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")

        def tup(v):
            return tuple(tup(x) for x in v) if isinstance(v, list) else v

        return cls(**{k: tup(v) for k, v in d.items()})


def corrupt_2d(x2d: np.ndarray, sigma: float, rng: np.random.Generator,
               floor: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian keypoint noise (same units as ``x2d``) and matching confidences.

    ``conf = clip(1 - |noise| / (3 sigma), floor, 1)`` per joint, so the score
    tracks the actual displacement.  ``x2d`` is (..., 16, 2).
    """
    x2d = np.asarray(x2d, dtype=float)
    if sigma <= 0:
        return x2d.copy(), np.ones(x2d.shape[:-1])
    noise = rng.normal(0.0, sigma, size=x2d.shape)
    mag = np.linalg.norm(noise, axis=-1)
    conf = np.clip(1.0 - mag / (3.0 * sigma), floor, 1.0)
    return x2d + noise, conf


def _subject_lengths(cfg: SynthConfig, rng) -> np.ndarray:
    ranges = np.array(cfg.bone_length_ranges_mm, dtype=float)
    u = rng.uniform(size=(cfg.n_subjects, NUM_BONES))
    for a, b in SYMMETRIC_BONES:
        u[:, b] = u[:, a]
    return ranges[:, 0] + u * (ranges[:, 1] - ranges[:, 0])


def _euler_yxz(yaw, pitch, roll) -> np.ndarray:
    ry = axis_angle_to_matrix(np.stack([0 * yaw, yaw, 0 * yaw], -1))
    rx = axis_angle_to_matrix(np.stack([pitch, 0 * pitch, 0 * pitch], -1))
    rz = axis_angle_to_matrix(np.stack([0 * roll, 0 * roll, roll], -1))
    return rx @ ry @ rz


def pose_from_angles(lengths: np.ndarray, local_rot: np.ndarray, root_rot: np.ndarray) -> np.ndarray:
    """Forward kinematics of the template: (N, 15) lengths, (N, 15, 3) local
    axis-angles, (N, 3, 3) root orientations -> (N, 16, 3) root-relative joints."""
    n = lengths.shape[0]
    dirs = np.array([d for d, _ in BONE_TEMPLATE], dtype=float)
    local = axis_angle_to_matrix(local_rot)
    glob = np.zeros((n, NUM_BONES, 3, 3))
    joints = np.zeros((n, NUM_JOINTS, 3))
    for k in range(NUM_BONES):
        pk = SKELETON.parent_bone(k)
        parent_rot = root_rot if pk < 0 else glob[:, pk]
        glob[:, k] = parent_rot @ local[:, k]
        vec = glob[:, k] @ (dirs[k] * 1.0)
        child = SKELETON.children[k]
        joints[:, child] = joints[:, SKELETON.parents[child]] + vec * lengths[:, k:k + 1]
    return joints


def _sample_block(cfg: SynthConfig, rng, n: int, lengths: np.ndarray, angle_scale: float):
    subj = rng.integers(0, cfg.n_subjects, size=n)
    lim = np.array(cfg.angle_limits, dtype=float) * angle_scale
    local = lim[..., 0] + rng.uniform(size=(n, NUM_BONES, 3)) * (lim[..., 1] - lim[..., 0])
    root = _euler_yxz(rng.uniform(*cfg.yaw_range, size=n), rng.uniform(*cfg.pitch_range, size=n),
                      rng.uniform(*cfg.roll_range, size=n))
    pose = pose_from_angles(lengths[subj], local, root)
    w, h = cfg.image_wh
    f = rng.uniform(*cfg.focal_range_px, size=n)
    cx = w / 2 + rng.uniform(-cfg.principal_jitter_px, cfg.principal_jitter_px, size=n)
    cy = h / 2 + rng.uniform(-cfg.principal_jitter_px, cfg.principal_jitter_px, size=n)
    t = np.stack([rng.uniform(*cfg.tx_range_mm, size=n), rng.uniform(*cfg.ty_range_mm, size=n),
                  rng.uniform(*cfg.tz_range_mm, size=n)], axis=1)
    cam_pts = pose + t[:, None, :]
    px = np.stack([f[:, None] * cam_pts[..., 0] / cam_pts[..., 2] + cx[:, None],
                   f[:, None] * cam_pts[..., 1] / cam_pts[..., 2] + cy[:, None]], axis=-1)
    ok = (np.all(cam_pts[..., 2] > 100.0, axis=1) & np.all(px[..., 0] >= 0, axis=1)
          & np.all(px[..., 0] <= w, axis=1) & np.all(px[..., 1] >= 0, axis=1) & np.all(px[..., 1] <= h, axis=1))
    return pose[ok], px[ok], np.stack([f, f, cx, cy], axis=1)[ok], t[ok], subj[ok]


def _generate(cfg: SynthConfig, rng, n: int, lengths, angle_scale: float, paired: bool, prefix: str):
    if n == 0:
        return []
    poses, pxs, intrs, ts, subjs = [], [], [], [], []
    have = 0
    while have < n:
        # oversample a little; rejected samples are those leaving the image
        p, x, k, t, s = _sample_block(cfg, rng, max(16, int((n - have) * 1.25)), lengths, angle_scale)
        poses.append(p), pxs.append(x), intrs.append(k), ts.append(t), subjs.append(s)
        have += len(p)
    pose = np.concatenate(poses)[:n]
    px = np.concatenate(pxs)[:n]
    intr = np.concatenate(intrs)[:n]
    t = np.concatenate(ts)[:n]
    subj = np.concatenate(subjs)[:n]
    w, h = cfg.image_wh
    noisy_px, conf = corrupt_2d(px, cfg.noise_sigma, rng, cfg.conf_floor)
    out = []
    for i in range(n):
        cam = CameraParams(CameraIntrinsics(*intr[i]), Offset3D(*t[i])) if paired else None
        out.append(SampleRecord(
            id=f"{prefix}{i:06d}", joints2d_px=noisy_px[i], conf=conf[i], image_wh=(w, h),
            joints3d_mm=pose[i] if paired else None, camera=cam, source_tag=cfg.source_tag,
            extra={"subject": int(subj[i])}))
    return out


def generate_synthetic(cfg: SynthConfig) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Seeded paired and 2D-only records.

    Poses come from forward kinematics of a per-subject template with
    uniformly drawn local joint rotations; 2D-only records use
    ``ood_angle_scale`` instead of ``angle_scale`` when ``ood_weak`` is set.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lengths = _subject_lengths(cfg, rng)
    n_weak = int(round(cfg.n_samples * cfg.weak_fraction))
    n_paired = cfg.n_samples - n_weak
    paired = _generate(cfg, rng, n_paired, lengths, cfg.angle_scale, True, "p")
    weak_scale = cfg.ood_angle_scale if cfg.ood_weak else cfg.angle_scale
    weak = _generate(cfg, rng, n_weak, lengths, weak_scale, False, "w")
    return paired, weak


def reproject_record(r: SampleRecord) -> np.ndarray:
    """Exact pixel projection of a paired record's 3D joints through its camera."""
    return project_np(r.joints3d_mm, r.camera.intrinsics, r.camera.offset)


# ---------------------------------------------------------------------------
# batching

def epoch_batches(n: int, batch_size: int, seed: int, epoch: int, drop_last: bool = False) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` for one epoch, cut into batches."""
    if n <= 0:
        raise EmptyDataset("cannot batch an empty dataset")
    if batch_size <= 0:
        raise ConfigError("batch_size must be positive")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if drop_last and len(out) > 1 and len(out[-1]) < batch_size:
        out.pop()
    return out


def mixed_schedule(ratio: tuple[int, int], n_batches: int) -> list[str]:
    """Deterministic interleaving of ``paired``/``weak`` kinds at ``ratio``.

    Over any whole number of periods the counts match the ratio exactly.
    """
    p, w = ratio
    if p < 0 or w < 0 or p + w == 0:
        raise ConfigError(f"invalid paired:weak ratio {ratio}")
    period = p + w
    return ["weak" if (i + 1) * w // period > i * w // period else "paired" for i in range(n_batches)]


class BatchStream:
    """Endless homogeneous batches of one kind, reshuffled every pass."""

    def __init__(self, n: int, batch_size: int, seed: int, drop_last: bool = False):
        if n <= 0:
            raise EmptyDataset("cannot batch an empty dataset")
        self.n, self.batch_size, self.seed, self.drop_last = n, batch_size, seed, drop_last
        self.epoch = 0
        self.consumed = 0
        self._queue: list[np.ndarray] = []

    def next(self) -> np.ndarray:
        if not self._queue:
            self._queue = epoch_batches(self.n, self.batch_size, self.seed, self.epoch, self.drop_last)
            self.epoch += 1
        self.consumed += 1
        return self._queue.pop(0)


def batcher(n_paired: int, n_weak: int, batch_size: int, seed: int, kind: str = "paired",
            ratio: tuple[int, int] = (1, 1), n_batches: int | None = None) -> Iterator[tuple[str, np.ndarray]]:
    """Deterministic stream of ``(kind, indices)`` batches.

    ``kind`` is ``paired``, ``weak`` or ``mixed``.  Single-kind streams yield
    one epoch unless ``n_batches`` is given; the mixed stream follows
    :func:`mixed_schedule` and requires ``n_batches``.
    """
    if kind in ("paired", "weak"):
        n = n_paired if kind == "paired" else n_weak
        if n_batches is None:
            for idx in epoch_batches(n, batch_size, seed, 0):
                yield kind, idx
            return
        stream = BatchStream(n, batch_size, seed)
        for _ in range(n_batches):
            yield kind, stream.next()
        return
    if kind != "mixed":
        raise ConfigError(f"unknown batch kind {kind!r}")
    if n_batches is None:
        raise ConfigError("mixed stream needs n_batches")
    streams = {}
    for k in mixed_schedule(ratio, n_batches):
        if k not in streams:
            n = n_paired if k == "paired" else n_weak
            streams[k] = BatchStream(n, batch_size, seed + (0 if k == "paired" else 1))
        yield k, streams[k].next()
