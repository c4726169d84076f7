"""MPJPE / PA-MPJPE metrics and the evaluation harness.

Poses are root-relative, so the Pelvis (always at the origin) is left out of
the joint average.  Procrustes alignment still uses all 16 joints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import SampleRecord, corrupt_2d, to_arrays
from .errors import ConfigError, ShapeMismatch
from .geometry import procrustes_align
from .losses import normalize_confidence
from .nets import Model
from .skeleton import NUM_JOINTS, JointId

SCORED_JOINTS = tuple(j.name for j in JointId if j != JointId.Pelvis)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray, bool]:
    p, g = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if p.shape != g.shape or p.shape[-2:] != (NUM_JOINTS, 3):
        raise ShapeMismatch("pose pair must be (16, 3) or (N, 16, 3) with equal shapes", p.shape, g.shape)
    single = p.ndim == 2
    return (p[None], g[None], True) if single else (p, g, False)


def joint_errors(pred, gt) -> np.ndarray:
    """(N, 15) Euclidean errors of the non-root joints."""
    p, g, _ = _pair(pred, gt)
    return np.linalg.norm(p[:, 1:] - g[:, 1:], axis=-1)


def mpjpe(pred, gt):
    """Mean non-root joint error; a float for one pose, (N,) for a batch."""
    _, _, single = _pair(pred, gt)
    e = joint_errors(pred, gt).mean(axis=1)
    return float(e[0]) if single else e


def pa_align(pred, gt) -> np.ndarray:
    """Procrustes-aligned ``pred``.

    The closed form minimises squared error, while the score is a mean of
    unsquared distances, so on rare samples the aligned pose scores worse than
    the input.  The identity is itself a similarity transform; it is kept
    whenever it scores better, which makes PA-MPJPE <= MPJPE per sample.
    """
    p, g, single = _pair(pred, gt)
    out = np.stack([procrustes_align(a, b)[0] for a, b in zip(p, g)])
    worse = joint_errors(out, g).mean(axis=1) > joint_errors(p, g).mean(axis=1)
    out[worse] = p[worse]
    return out[0] if single else out


def pa_mpjpe(pred, gt):
    """MPJPE after the best similarity transform of ``pred`` onto ``gt``."""
    return mpjpe(pa_align(pred, gt), gt)


def model_id(model: Model) -> str:
    h = hashlib.sha256()
    for name, t in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()[:16]


@dataclass
class EvalReport:
    mpjpe_mm: float
    pa_mpjpe_mm: float
    per_joint_mpjpe_mm: dict[str, float]
    per_joint_pa_mpjpe_mm: dict[str, float]
    per_sample_mpjpe_mm: list[float]
    per_sample_pa_mpjpe_mm: list[float]
    sample_ids: list[str]
    dataset_tag: str = ""
    model_id: str = ""
    use_refine: bool = False
    input_source: str = "clean"
    corrupt_sigma: float = 0.0
    seed: int = 0
    mean_input_2d_error: float = 0.0    # normalized units, network input vs clean 2D
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> EvalReport:
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))

    def table(self) -> str:
        rows = [("joint", "MPJPE", "PA-MPJPE")]
        rows += [(j, f"{self.per_joint_mpjpe_mm[j]:.2f}", f"{self.per_joint_pa_mpjpe_mm[j]:.2f}")
                 for j in SCORED_JOINTS]
        rows.append(("mean", f"{self.mpjpe_mm:.2f}", f"{self.pa_mpjpe_mm:.2f}"))
        w = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [f"{r[0]:<{w[0]}}  {r[1]:>{w[1]}}  {r[2]:>{w[2]}}" for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        lines.insert(-1, "-" * len(lines[0]))
        head = (f"dataset={self.dataset_tag or '-'} model={self.model_id} n={len(self.sample_ids)} "
                f"refine={self.use_refine} input={self.input_source}")
        return "\n".join([head, *lines])


def network_input(records: Sequence[SampleRecord], input_source: str, sigma: float, seed: int,
                  floor: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(input 2D (N, 32), raw confidences (N, 16), clean 2D (N, 32)) in normalized units."""
    arr = to_arrays(records)
    clean = arr.x2d
    if input_source == "clean":
        return clean.copy(), arr.conf.copy(), clean
    if input_source != "corrupted":
        raise ConfigError(f"input_source must be 'clean' or 'corrupted', got {input_source!r}")
    n = len(clean)
    noisy, conf = corrupt_2d(clean.reshape(n, NUM_JOINTS, 2), sigma, np.random.default_rng(seed), floor)
    return noisy.reshape(n, -1), conf, clean


def predict(model: Model, x2d: np.ndarray, conf: np.ndarray, use_refine: bool) -> np.ndarray:
    """Root-relative 3D predictions in mm, (N, 16, 3)."""
    x = x2d.reshape(len(x2d), NUM_JOINTS, 2)
    if use_refine:
        x = model.refine_np(x, normalize_confidence(conf))
    return model.lift_np(x)


def evaluate(model: Model, records: Sequence[SampleRecord], use_refine: bool = False,
             input_source: str = "clean", corrupt_sigma: float = 0.02, seed: int = 0,
             dataset_tag: str = "") -> EvalReport:
    """Run (optional) refinement then lifting and score against the 3D ground truth."""
    if not records or any(not r.is_paired for r in records):
        raise ConfigError("eval requires paired data (3D joints and camera on every record)")
    sigma = corrupt_sigma if input_source == "corrupted" else 0.0
    x_in, conf, clean = network_input(records, input_source, sigma, seed)
    pred = predict(model, x_in, conf, use_refine)
    gt = np.stack([r.joints3d_mm for r in records])
    err = joint_errors(pred, gt)
    pa_err = joint_errors(pa_align(pred, gt), gt)
    per_s, per_s_pa = err.mean(axis=1), pa_err.mean(axis=1)
    n = len(records)
    return EvalReport(
        mpjpe_mm=float(np.mean(per_s)), pa_mpjpe_mm=float(np.mean(per_s_pa)),
        per_joint_mpjpe_mm=dict(zip(SCORED_JOINTS, err.mean(axis=0).tolist())),
        per_joint_pa_mpjpe_mm=dict(zip(SCORED_JOINTS, pa_err.mean(axis=0).tolist())),
        per_sample_mpjpe_mm=per_s.tolist(), per_sample_pa_mpjpe_mm=per_s_pa.tolist(),
        sample_ids=[r.id for r in records], dataset_tag=dataset_tag, model_id=model_id(model),
        use_refine=use_refine, input_source=input_source, corrupt_sigma=sigma, seed=seed,
        mean_input_2d_error=float(np.linalg.norm((x_in - clean).reshape(n, NUM_JOINTS, 2), axis=-1).mean()),
    )


def project_normalized(poses_mm: np.ndarray, intr: np.ndarray, offset_mm: np.ndarray) -> np.ndarray:
    """Batched projection in normalized units: (N, 16, 3) mm -> (N, 16, 2)."""
    cam = poses_mm + offset_mm[:, None, :]
    z = cam[..., 2]
    return np.stack([intr[:, 0:1] * cam[..., 0] / z + intr[:, 2:3],
                     intr[:, 1:2] * cam[..., 1] / z + intr[:, 3:4]], axis=-1)


def camera_reprojection_error(model: Model, records: Sequence[SampleRecord]) -> float:
    """Mean normalized 2D distance between the clean 2D and the ground-truth 3D
    projected through the camera predicted from that clean 2D."""
    arr = to_arrays(records)
    n = len(arr)
    intr, off_mm = model.camera_np(arr.x2d)
    gt = arr.x3d.reshape(n, NUM_JOINTS, 3) * 1000.0
    proj = project_normalized(gt, intr, off_mm)
    return float(np.linalg.norm(proj - arr.x2d.reshape(n, NUM_JOINTS, 2), axis=-1).mean())
