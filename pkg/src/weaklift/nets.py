"""Network heads: refinement, lifting, camera branch, pose generator, KCS discriminators.

All heads operate on internal units: 2D poses in normalized image
coordinates, 3D poses and offsets in meters, intrinsics in the normalized
convention (``f' = 2 f / W``, ``c' = 2 c / W - 1``, with ``H`` for the y terms).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from . import diffpose as dp
from .autograd import ParamSet, Tensor
from .errors import ConfigError, ShapeMismatch
from .skeleton import NUM_BONES, NUM_JOINTS, PARTS, SKELETON

CHECKPOINT_FORMAT = "weaklift-model"
CHECKPOINT_VERSION = 1
HEADS = ("refine", "lifter", "camera", "generator", "discriminator")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 512
    gen_hidden: int = 256
    disc_hidden: int = 512
    noise_dim: int = 16
    max_bone_angle: float = 0.5
    max_log_scale: float = math.log(1.3)
    max_view_angle: float = 0.8
    max_shift_mm: float = 500.0
    gen_tz_range_mm: tuple[float, float] = (2000.0, 8000.0)
    cam_tz_range_mm: tuple[float, float] = (500.0, 20000.0)
    focal_floor: float = 1e-3
    kcs_scale_2d: float = 50.0
    kcs_scale_3d: float = 10.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def xavier(rng, n_in, n_out):
    lim = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


def kaiming(rng, n_in, n_out):
    lim = math.sqrt(6.0 / n_in)
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Linear:
    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int, rng, init: str = "xavier"):
        self.n_in, self.n_out = n_in, n_out
        if init == "zeros":
            w = np.zeros((n_in, n_out))
        else:
            w = (kaiming if init == "kaiming" else xavier)(rng, n_in, n_out)
        self.W = params.add(f"{name}.W", w)
        self.b = params.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.W) + self.b

    @staticmethod
    def count(n_in, n_out):
        return n_in * n_out + n_out


class ResidualBlock:
    """``x + relu(fc2(relu(fc1(x))))`` with equal input/output width."""

    def __init__(self, params: ParamSet, name: str, width: int, rng):
        self.fc1 = Linear(params, f"{name}.fc1", width, width, rng, "kaiming")
        self.fc2 = Linear(params, f"{name}.fc2", width, width, rng, "kaiming")

    def __call__(self, x: Tensor) -> Tensor:
        return x + ag.relu(self.fc2(ag.relu(self.fc1(x))))

    @staticmethod
    def count(width):
        return 2 * Linear.count(width, width)


def _check(x: Tensor, cols: int, what: str):
    if x.ndim != 2 or x.shape[1] != cols:
        raise ShapeMismatch(f"{what} expects (N, {cols})", x.shape)


def _centred(x: Tensor, root_only: bool):
    """Translate and scale-normalise a 2D batch; returns (features, spread)."""
    xs, ys = dp.split_coords(x, 2)
    if root_only:
        ox, oy = xs[:, 0:1], ys[:, 0:1]
    else:
        ox, oy = ag.mean(xs, axis=1, keepdims=True), ag.mean(ys, axis=1, keepdims=True)
    dx, dy = xs - ox, ys - oy
    spread = ag.sqrt(ag.mean(ag.square(dx) + ag.square(dy), axis=1, keepdims=True) + 1e-8)
    inv = ag.reciprocal(spread)
    return dp.interleave([dx * inv, dy * inv]), spread


class RefineNet:
    """Residual 2D keypoint correction from coordinates plus normalized confidences.

    The exit layer starts at zero, so an untrained net returns its input.
    """

    def __init__(self, params: ParamSet, hidden: int, rng, prefix: str = "refine"):
        self.entry = Linear(params, f"{prefix}.entry", 3 * NUM_JOINTS, hidden, rng, "kaiming")
        self.block = ResidualBlock(params, f"{prefix}.block0", hidden, rng)
        self.exit = Linear(params, f"{prefix}.exit", hidden, 2 * NUM_JOINTS, rng, "zeros")

    def __call__(self, x: Tensor, conf_norm: Tensor) -> Tensor:
        _check(x, 2 * NUM_JOINTS, "refine_net")
        _check(conf_norm, NUM_JOINTS, "refine_net confidences")
        feats, spread = _centred(x, root_only=False)
        h = ag.relu(self.entry(ag.concat([feats, ag.scale(conf_norm, NUM_JOINTS)], axis=1)))
        delta = self.exit(self.block(h))
        return x + delta * spread

    @staticmethod
    def count(hidden):
        return (Linear.count(3 * NUM_JOINTS, hidden) + ResidualBlock.count(hidden)
                + Linear.count(hidden, 2 * NUM_JOINTS))


class Lifter:
    """2D -> root-relative 3D (meters).  Input is root-centred and scale-normalised."""

    def __init__(self, params: ParamSet, hidden: int, rng, prefix: str = "lifter"):
        self.entry = Linear(params, f"{prefix}.entry", 2 * NUM_JOINTS, hidden, rng, "kaiming")
        self.blocks = [ResidualBlock(params, f"{prefix}.block{i}", hidden, rng) for i in range(2)]
        self.exit = Linear(params, f"{prefix}.exit", hidden, 3 * NUM_BONES, rng)

    def __call__(self, x: Tensor) -> Tensor:
        _check(x, 2 * NUM_JOINTS, "lifter")
        feats, _ = _centred(x, root_only=True)
        h = ag.relu(self.entry(feats))
        for blk in self.blocks:
            h = blk(h)
        out = self.exit(h)
        return ag.concat([Tensor(np.zeros((x.shape[0], 3))), out], axis=1)

    @staticmethod
    def count(hidden):
        return (Linear.count(2 * NUM_JOINTS, hidden) + 2 * ResidualBlock.count(hidden)
                + Linear.count(hidden, 3 * NUM_BONES))


class CameraBranch:
    """Per-sample intrinsics ``[fx, fy, cx, cy]`` and root offset (meters)."""

    def __init__(self, params: ParamSet, hidden: int, rng, cfg: ModelConfig, prefix: str = "camera"):
        self.entry = Linear(params, f"{prefix}.entry", 2 * NUM_JOINTS, hidden, rng, "kaiming")
        self.blocks = [ResidualBlock(params, f"{prefix}.block{i}", hidden, rng) for i in range(2)]
        self.exit = Linear(params, f"{prefix}.exit", hidden, 7, rng)
        self.floor = cfg.focal_floor
        self.tz_lo = cfg.cam_tz_range_mm[0] / 1000.0
        self.tz_span = (cfg.cam_tz_range_mm[1] - cfg.cam_tz_range_mm[0]) / 1000.0

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check(x, 2 * NUM_JOINTS, "camera_branch")
        h = ag.relu(self.entry(x))
        for blk in self.blocks:
            h = blk(h)
        raw = self.exit(h)
        focal = ag.softplus(raw[:, 0:2]) + self.floor
        intr = ag.concat([focal, raw[:, 2:4]], axis=1)
        tz = ag.scale(ag.sigmoid(raw[:, 6:7]), self.tz_span) + self.tz_lo
        offset = ag.concat([raw[:, 4:6], tz], axis=1)
        return intr, offset

    @staticmethod
    def count(hidden):
        return (Linear.count(2 * NUM_JOINTS, hidden) + 2 * ResidualBlock.count(hidden)
                + Linear.count(hidden, 7))


@dataclass
class GeneratorOutput:
    """Bounded augmentation parameters, batched.

    ``bone_angle`` (N, 45) per-bone axis-angles, ``bone_log_scale`` (N, 15),
    ``view`` (N, 3) axis-angle of the rigid rotation, ``shift`` (N, 3) rigid
    translation in meters with ``shift[:, 2]`` inside the configured depth
    range.  ``depth_mid`` is the centre of that range: the identity
    augmentation has ``shift == (0, 0, depth_mid)``.
    """

    bone_angle: Tensor
    bone_log_scale: Tensor
    view: Tensor
    shift: Tensor
    depth_mid: float

    def detach(self) -> GeneratorOutput:
        return GeneratorOutput(self.bone_angle.detach(), self.bone_log_scale.detach(),
                               self.view.detach(), self.shift.detach(), self.depth_mid)

    @classmethod
    def identity(cls, n: int, cfg: ModelConfig) -> GeneratorOutput:
        mid = sum(cfg.gen_tz_range_mm) / 2000.0
        shift = np.zeros((n, 3))
        shift[:, 2] = mid
        return cls(Tensor(np.zeros((n, 3 * NUM_BONES))), Tensor(np.zeros((n, NUM_BONES))),
                   Tensor(np.zeros((n, 3))), Tensor(shift), mid)


class PoseGenerator:
    """Three MLPs (bone angle, bone length, rigid view) conditioned on pose + noise."""

    def __init__(self, params: ParamSet, cfg: ModelConfig, rng, prefix: str = "generator"):
        n_in = 3 * NUM_JOINTS + cfg.noise_dim
        h = cfg.gen_hidden
        self.cfg = cfg
        self.noise_dim = cfg.noise_dim
        self.heads = {}
        for name, n_out in (("angle", 3 * NUM_BONES), ("length", NUM_BONES), ("rigid", 6)):
            self.heads[name] = (Linear(params, f"{prefix}.{name}.hidden", n_in, h, rng, "kaiming"),
                                Linear(params, f"{prefix}.{name}.out", h, n_out, rng))

    def _mlp(self, name, inp):
        hidden, out = self.heads[name]
        return out(ag.relu(hidden(inp)))

    def __call__(self, poses: Tensor, noise: Tensor) -> GeneratorOutput:
        _check(poses, 3 * NUM_JOINTS, "generator poses")
        _check(noise, self.noise_dim, "generator noise")
        cfg = self.cfg
        inp = ag.concat([poses, noise], axis=1)
        angle = ag.scale(ag.tanh(self._mlp("angle", inp)), cfg.max_bone_angle / math.sqrt(3))
        length = ag.scale(ag.tanh(self._mlp("length", inp)), cfg.max_log_scale)
        rigid = ag.tanh(self._mlp("rigid", inp))
        view = ag.scale(rigid[:, 0:3], cfg.max_view_angle / math.sqrt(3))
        lo, hi = (v / 1000.0 for v in cfg.gen_tz_range_mm)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        shift = ag.concat([ag.scale(rigid[:, 3:5], cfg.max_shift_mm / 1000.0),
                           ag.scale(rigid[:, 5:6], half) + mid], axis=1)
        return GeneratorOutput(angle, length, view, shift, mid)

    @staticmethod
    def count(cfg: ModelConfig):
        n_in = 3 * NUM_JOINTS + cfg.noise_dim
        h = cfg.gen_hidden
        return sum(Linear.count(n_in, h) + Linear.count(h, o) for o in (3 * NUM_BONES, NUM_BONES, 6))


class KcsDiscriminator:
    """Part-aware KCS discriminator: one residual trunk per body part, fused head."""

    def __init__(self, params: ParamSet, dim: int, hidden: int, kcs_scale: float, rng, prefix: str):
        self.dim = dim
        self.kcs_scale = kcs_scale
        self.trunks = []
        for part in PARTS:
            n_in = len(SKELETON.part_bones(part)) ** 2
            tag = part.replace("-", "_")
            self.trunks.append((Linear(params, f"{prefix}.{tag}.entry", n_in, hidden, rng, "kaiming"),
                                ResidualBlock(params, f"{prefix}.{tag}.block", hidden, rng)))
        self.head = Linear(params, f"{prefix}.head", hidden * len(PARTS), 1, rng)

    def __call__(self, poses: Tensor) -> Tensor:
        _check(poses, self.dim * NUM_JOINTS, f"discriminator_{self.dim}d")
        feats = []
        for (entry, block), kb in zip(self.trunks, dp.kcs_blocks(poses, self.dim)):
            feats.append(block(ag.relu(entry(ag.scale(kb, self.kcs_scale)))))
        return self.head(ag.concat(feats, axis=1))

    @staticmethod
    def count(hidden):
        total = Linear.count(hidden * len(PARTS), 1)
        for part in PARTS:
            total += Linear.count(len(SKELETON.part_bones(part)) ** 2, hidden) + ResidualBlock.count(hidden)
        return total


class Model:
    """All heads plus their parameter sets."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = cfg = config or ModelConfig()
        rngs = [np.random.default_rng([cfg.seed, i]) for i in range(6)]
        self.heads = {h: ParamSet() for h in HEADS}
        self.refine = RefineNet(self.heads["refine"], cfg.hidden, rngs[0])
        self.lifter = Lifter(self.heads["lifter"], cfg.hidden, rngs[1])
        self.camera = CameraBranch(self.heads["camera"], cfg.hidden, rngs[2], cfg)
        self.generator = PoseGenerator(self.heads["generator"], cfg, rngs[3])
        self.d2d = KcsDiscriminator(self.heads["discriminator"], 2, cfg.disc_hidden, cfg.kcs_scale_2d,
                                    rngs[4], "disc2d")
        self.d3d = KcsDiscriminator(self.heads["discriminator"], 3, cfg.disc_hidden, cfg.kcs_scale_3d,
                                    rngs[5], "disc3d")

    @property
    def params(self) -> ParamSet:
        return ParamSet.union(*self.heads.values())

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "heads": {h: ps.to_dict() for h, ps in self.heads.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Model:
        if d.get("format") != CHECKPOINT_FORMAT or d.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError("not a supported model checkpoint")
        model = cls(ModelConfig.from_dict(d["config"]))
        for h in HEADS:
            model.heads[h].load_dict(d["heads"][h])
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> Model:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    # numpy conveniences; inputs (N, 16, 2) normalized, outputs in mm where 3D
    def refine_np(self, x2d: np.ndarray, conf_norm: np.ndarray) -> np.ndarray:
        n = len(x2d)
        out = self.refine(Tensor(x2d.reshape(n, -1)), Tensor(conf_norm))
        return out.data.reshape(n, NUM_JOINTS, 2)

    def lift_np(self, x2d: np.ndarray) -> np.ndarray:
        n = len(x2d)
        return self.lifter(Tensor(x2d.reshape(n, -1))).data.reshape(n, NUM_JOINTS, 3) * 1000.0

    def camera_np(self, x2d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Normalized intrinsics (N, 4) and offsets in mm (N, 3)."""
        n = len(x2d)
        intr, off = self.camera(Tensor(x2d.reshape(n, -1)))
        return intr.data, off.data * 1000.0
