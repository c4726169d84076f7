"""Three-stage training: refinement pretraining, supervised warm-up with the
GAN, then end-to-end training that alternates GAN, paired and 2D-only steps.

All randomness is derived from ``TrainConfig.seed`` and the (stage, epoch)
pair, so a run resumed from an end-of-epoch checkpoint continues exactly as
the uninterrupted run would have.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffpose as dp
from . import losses as L
from .augment import augment_batch
from .autograd import Adam, AdamState, ParamSet, Tensor, clip_grad_norm, step_decay_lr
from .data import ArrayBatch, SampleRecord, corrupt_2d, to_arrays
from .errors import ConfigError, EmptyDataset, TrainingAborted
from .nets import Model, ModelConfig
from .skeleton import NUM_JOINTS

CHECKPOINT_FORMAT = "weaklift-train-state"
CHECKPOINT_VERSION = 1
STAGES = (1, 2, 3)


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    lr: float
    decay_epochs: tuple[int, ...] = ()

    def validate(self, name: str):
        if self.epochs <= 0:
            raise ConfigError(f"{name}.epochs must be > 0")
        if not self.lr > 0:
            raise ConfigError(f"{name}.lr must be > 0")
        d = list(self.decay_epochs)
        if d != sorted(set(d)) or any(not 0 < e < self.epochs for e in d):
            raise ConfigError(f"{name}.decay_epochs must be increasing and inside (0, {self.epochs})")

    def lr_at(self, epoch: int) -> float:
        return step_decay_lr(self.lr, epoch, self.decay_epochs)


@dataclass(frozen=True)
class TrainConfig:
    stage1: StageConfig = StageConfig(100, 1e-4, (30, 60, 90))
    stage2: StageConfig = StageConfig(10, 1e-4)
    stage3: StageConfig = StageConfig(75, 5e-4, (30, 60))
    weights: L.LossWeights = L.LossWeights()
    model: ModelConfig = ModelConfig()
    batch_size: int = 64
    ratio: tuple[int, int] = (1, 1)     # paired : 2D-only batches in stage 3
    seed: int = 0
    disc_steps: int = 1
    gen_steps: int = 1
    gan_clip: float = 10.0
    weight_decay: float = 0.0           # optional L2 added to every Adam gradient
    corrupt_sigma: float = 0.02         # synthetic keypoint noise, normalized units
    conf_floor: float = 0.05
    holdout_fraction: float = 0.1
    eps_depth_m: float = 1e-3
    max_abs_2d: float = 2.0             # augmented samples projecting further out are dropped
    stage2_camera: bool = True
    weak_reproj_to_disc: bool = True    # reprojected 2D-only predictions join the 2D critic's fake pool
    weak_real_to_disc: bool = True      # observed 2D-only keypoints join the 2D critic's real pool
    select_best: bool = True
    checkpoint_every: int = 1

    def validate(self):
        for name in ("stage1", "stage2", "stage3"):
            getattr(self, name).validate(name)
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be > 0")
        p, w = self.ratio
        if p <= 0 or w < 0:
            raise ConfigError(f"ratio must be (paired > 0, weak >= 0), got {self.ratio}")
        if self.disc_steps < 1 or self.gen_steps < 0:
            raise ConfigError("disc_steps must be >= 1 and gen_steps >= 0")
        if self.corrupt_sigma < 0 or not 0 <= self.holdout_fraction < 1:
            raise ConfigError("corrupt_sigma must be >= 0 and holdout_fraction in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    def stage(self, s: int) -> StageConfig:
        return getattr(self, f"stage{s}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            for s in ("stage1", "stage2", "stage3"):
                if s in kw:
                    sd = dict(kw[s])
                    sd["decay_epochs"] = tuple(sd.get("decay_epochs", ()))
                    kw[s] = StageConfig(**sd)
            if "weights" in kw:
                kw["weights"] = L.LossWeights(**kw["weights"])
            if "model" in kw:
                kw["model"] = ModelConfig.from_dict(kw["model"])
            if "ratio" in kw:
                kw["ratio"] = tuple(kw["ratio"])
            cfg = cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        cfg.validate()
        return cfg


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return TrainConfig.from_dict(json.load(f))


@dataclass
class TrainState:
    stage: int = 1
    epoch: int = 0          # next epoch to run within ``stage``
    step: int = 0           # optimizer sub-steps taken so far
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    best_metric: float | None = None
    best_params: dict | None = None
    best_heads: list[str] = field(default_factory=list)
    weak_consumed: int = 0
    augment_rejected: int = 0
    history: list[dict] = field(default_factory=list)   # per-epoch summaries

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "epoch": self.epoch, "step": self.step,
            "optimizers": {k: v.to_dict() for k, v in self.optimizers.items()},
            "best_metric": self.best_metric, "best_params": self.best_params, "best_heads": self.best_heads,
            "weak_consumed": self.weak_consumed, "augment_rejected": self.augment_rejected,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainState:
        return cls(stage=d["stage"], epoch=d["epoch"], step=d["step"],
                   optimizers={k: AdamState.from_dict(v) for k, v in d["optimizers"].items()},
                   best_metric=d["best_metric"], best_params=d["best_params"], best_heads=d["best_heads"],
                   weak_consumed=d["weak_consumed"], augment_rejected=d["augment_rejected"],
                   history=d["history"])


def split_holdout(records: Sequence[SampleRecord], fraction: float, seed: int):
    """Deterministic (train, held-out) split."""
    n = len(records)
    k = int(round(n * fraction))
    if k == 0:
        return list(records), []
    order = np.random.default_rng([seed, 424242]).permutation(n)
    hold = set(order[:k].tolist())
    return [r for i, r in enumerate(records) if i not in hold], [r for i, r in enumerate(records) if i in hold]


class Trainer:
    """Owns the model, optimizer states and logs of one training run."""

    def __init__(self, cfg: TrainConfig, paired: Sequence[SampleRecord], weak: Sequence[SampleRecord] = (),
                 val: Sequence[SampleRecord] | None = None, out_dir=None, model: Model | None = None,
                 log_sink: Callable[[dict], None] | None = None):
        cfg.validate()
        if not paired:
            raise EmptyDataset("training needs paired records")
        if any(not r.is_paired for r in paired):
            raise ConfigError("paired dataset contains 2D-only records")
        self.cfg = cfg
        if val is None:
            paired, val = split_holdout(paired, cfg.holdout_fraction, cfg.seed)
        self.paired = to_arrays(paired)
        self.weak = to_arrays(weak) if weak else None
        if self.weak is not None:
            self.weak = ArrayBatch(self.weak.ids, self.weak.x2d, self.weak.conf)
        self.val = to_arrays(val) if val else None
        self.model = model or Model(cfg.model)
        self.state = TrainState()
        self.out_dir = Path(out_dir) if out_dir else None
        self.log: list[dict] = []
        self.log_sink = log_sink
        self.update_order: list[tuple[int, list[str]]] = []   # (step at start, sub-step kinds)
        self.weak_loss_components: set[str] = set()
        self._opts: dict[str, Adam] = {}
        self._val_noise = None

    # -- bookkeeping -------------------------------------------------------
    def _emit(self, rec: dict):
        self.log.append(rec)
        if self.log_sink:
            self.log_sink(rec)

    def _opt(self, name: str, params: ParamSet, lr: float) -> Adam:
        opt = self._opts.get(name)
        if opt is None:
            opt = Adam(params, lr, weight_decay=self.cfg.weight_decay)
            saved = self.state.optimizers.get(name)
            if saved is not None:
                opt.state = saved
            self._opts[name] = opt
            self.state.optimizers[name] = opt.state
        opt.lr = lr
        return opt

    def _reset_opts(self):
        self._opts = {}
        self.state.optimizers = {}

    def _heads(self, *names) -> ParamSet:
        return ParamSet.union(*(self.model.heads[n] for n in names))

    def _step(self, opt: Adam, loss: Tensor, clip: float | None = None, what: str = ""):
        self.model.params.zero_grad()
        loss.backward()
        if not math.isfinite(loss.item()):
            self._abort(f"non-finite {what} loss at step {self.state.step}")
        if clip is not None:
            clip_grad_norm(opt.params, clip)
        opt.step()
        if not opt.params.all_finite():
            self._abort(f"non-finite parameters after {what} step {self.state.step}")
        self.state.step += 1

    def _abort(self, msg: str):
        last = self.checkpoint_path if self.out_dir and self.checkpoint_path.exists() else None
        raise TrainingAborted(msg, last)

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / "checkpoint.json"

    def _rng(self, stage: int, epoch: int, tag: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, stage, epoch, tag])

    def _corrupt(self, x2d: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        n = len(x2d)
        noisy, conf = corrupt_2d(x2d.reshape(n, NUM_JOINTS, 2), self.cfg.corrupt_sigma, rng, self.cfg.conf_floor)
        return noisy.reshape(n, -1), conf

    def _batches(self, n: int, rng) -> list[np.ndarray]:
        order = rng.permutation(n)
        bs = self.cfg.batch_size
        return [order[i:i + bs] for i in range(0, n, bs)]

    # -- checkpoints -------------------------------------------------------
    def to_dict(self) -> dict:
        return {"format": CHECKPOINT_FORMAT, "format_version": CHECKPOINT_VERSION,
                "config": self.cfg.to_dict(), "model": self.model.to_dict(),
                "state": self.state.to_dict(), "log_length": len(self.log)}

    def save_checkpoint(self, path=None):
        path = Path(path) if path else self.checkpoint_path
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        tmp.replace(path)
        return path

    def load_checkpoint(self, path):
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        if d.get("format") != CHECKPOINT_FORMAT or d.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path} is not a training checkpoint")
        if TrainConfig.from_dict(d["config"]) != self.cfg:
            raise ConfigError("checkpoint was written with a different configuration")
        self.model = Model.from_dict(d["model"])
        self.state = TrainState.from_dict(d["state"])
        self._opts = {}

    # -- evaluation helpers -----------------------------------------------
    def _val_inputs(self):
        if self._val_noise is None:
            self._val_noise = self._corrupt(self.val.x2d, np.random.default_rng([self.cfg.seed, 999]))
        return self._val_noise

    def val_refine_error(self) -> tuple[float, float]:
        """Held-out (refinement loss, mean 2D error) on corrupted validation input."""
        noisy, conf = self._val_inputs()
        cn = L.normalize_confidence(conf)
        pred = self.model.refine(Tensor(noisy), Tensor(cn))
        loss = L.refinement_loss(pred, self.val.x2d, cn).item()
        err = np.linalg.norm((pred.data - self.val.x2d).reshape(-1, NUM_JOINTS, 2), axis=-1).mean()
        return loss, float(err)

    def val_mpjpe(self, use_refine: bool) -> float:
        noisy, conf = self._val_inputs()
        x = noisy
        if use_refine:
            x = self.model.refine(Tensor(noisy), Tensor(L.normalize_confidence(conf))).data
        pred = self.model.lifter(Tensor(x)).data
        err = np.linalg.norm((pred - self.val.x3d).reshape(-1, NUM_JOINTS, 3)[:, 1:], axis=-1)
        return float(err.mean() * 1000.0)

    # -- stage 1 -----------------------------------------------------------
    def _stage1_epoch(self, epoch: int):
        sc = self.cfg.stage1
        refine = self.model.heads["refine"]
        opt = self._opt("refine", refine, sc.lr_at(epoch))
        x_all = self.paired.x2d if self.weak is None else np.concatenate([self.paired.x2d, self.weak.x2d])
        rng = self._rng(1, epoch)
        total = 0.0
        for idx in self._batches(len(x_all), rng):
            clean = x_all[idx]
            noisy, conf = self._corrupt(clean, rng)
            cn = L.normalize_confidence(conf)
            loss = L.refinement_loss(self.model.refine(Tensor(noisy), Tensor(cn)), clean, cn)
            self._step(opt, loss, what="refine")
            total += loss.item() * len(idx)
            self._emit({"stage": 1, "epoch": epoch, "step": self.state.step, "phase": "refine",
                        "lr": opt.lr, "ref": loss.item()})
        summary = {"stage": 1, "epoch": epoch, "train_ref": total / len(x_all)}
        if self.val is not None:
            summary["val_ref"], summary["val_err2d"] = self.val_refine_error()
            self._select(summary["val_ref"], ("refine",))
        return summary

    # -- GAN sub-step (stages 2 and 3) -------------------------------------
    def _gan_step(self, stage: int, epoch: int, x3d: np.ndarray, x2d: np.ndarray, intr, offset, rng,
                  extra_fake2d: np.ndarray | None = None):
        cfg = self.cfg
        m = self.model
        lr = cfg.stage(stage).lr_at(epoch)
        opt_d = self._opt("disc", m.heads["discriminator"], lr)
        opt_g = self._opt("gen", m.heads["generator"], lr)
        n = len(x3d)
        rec = {"stage": stage, "epoch": epoch, "phase": "gan", "lr": lr}

        def fakes():
            noise = Tensor(rng.normal(size=(n, cfg.model.noise_dim)))
            gen = m.generator(Tensor(x3d), noise)
            return augment_batch(Tensor(x3d), intr, offset, gen, cfg.eps_depth_m, cfg.max_abs_2d)

        for _ in range(cfg.disc_steps):
            aug = fakes()
            self.state.augment_rejected += aug.rejected
            fake2d = [aug.poses2d.detach()]
            if extra_fake2d is not None:
                fake2d.append(Tensor(extra_fake2d))
            dis2, dis3, _ = L.lsgan_losses(m.d2d, m.d3d, x2d, x3d, fake2d, [aug.poses3d.detach()])
            self._step(opt_d, dis2 + dis3, cfg.gan_clip, "discriminator")
            rec.update(dis2d=dis2.item(), dis3d=dis3.item())
        for _ in range(cfg.gen_steps):
            aug = fakes()
            self.state.augment_rejected += aug.rejected
            if len(aug.valid) and not aug.valid.any():
                continue
            gen_loss = (L.lsgan_generator_loss(m.d2d(aug.poses2d))
                        + L.lsgan_generator_loss(m.d3d(aug.poses3d)))
            self._step(opt_g, gen_loss, cfg.gan_clip, "generator")
            rec["gen"] = gen_loss.item()
        rec["step"] = self.state.step
        self._emit(rec)

    def _augmented(self, x3d, intr, offset, rng):
        """Detached augmented pairs from the current generator."""
        noise = Tensor(rng.normal(size=(len(x3d), self.cfg.model.noise_dim)))
        gen = self.model.generator(Tensor(x3d), noise).detach()
        aug = augment_batch(Tensor(x3d), intr, offset, gen, self.cfg.eps_depth_m, self.cfg.max_abs_2d)
        self.state.augment_rejected += aug.rejected
        return aug.poses3d.data, aug.poses2d.data, aug.intrinsics, aug.offset.data

    # -- stage 2 -----------------------------------------------------------
    def _stage2_epoch(self, epoch: int):
        cfg, m, w = self.cfg, self.model, self.cfg.weights
        lr = cfg.stage2.lr_at(epoch)
        heads = ("lifter", "camera") if cfg.stage2_camera else ("lifter",)
        opt = self._opt("main", self._heads(*heads), lr)
        rng = self._rng(2, epoch)
        P = self.paired
        for idx in self._batches(len(P), rng):
            b = P.take(idx)
            self._gan_step(2, epoch, b.x3d, b.x2d, b.intr, b.offset, rng)
            x = Tensor(b.x2d)     # refinement is bypassed in this stage
            pred = m.lifter(x)
            comps = {"pose3d": L.pose3d_loss(pred, b.x3d)}
            if cfg.stage2_camera:
                intr, off = m.camera(x)
                comps["cam"] = L.camera_loss(intr, off, b.intr, b.offset)
                comps["reproj"] = L.reprojection_loss(pred, intr, off, b.x2d, cfg.eps_depth_m, strict=False)
            loss = L.paired_total(comps, w)
            self._step(opt, loss, what="lift")
            self._emit({"stage": 2, "epoch": epoch, "step": self.state.step, "phase": "paired", "lr": lr,
                        **{k: v.item() for k, v in comps.items()}, "total": loss.item()})
        summary = {"stage": 2, "epoch": epoch}
        if self.val is not None:
            summary["val_mpjpe"] = self.val_mpjpe(use_refine=False)
        return summary

    # -- stage 3 -----------------------------------------------------------
    def _forward(self, noisy, conf):
        m = self.model
        cn = L.normalize_confidence(conf)
        refined = m.refine(Tensor(noisy), Tensor(cn))
        pred = m.lifter(refined)
        intr, off = m.camera(refined)
        return refined, cn, pred, intr, off

    def _stage3_epoch(self, epoch: int):
        cfg, w = self.cfg, self.cfg.weights
        lr = cfg.stage3.lr_at(epoch)
        trainable = self._heads("refine", "lifter", "camera")
        # one Adam state for the paired and 2D-only steps: separate second-moment
        # estimates would rescale the small 2D-only loss to full-size updates
        opt = self._opt("main", trainable, lr)
        rng = self._rng(3, epoch)
        weak_rng = self._rng(3, epoch, 1)
        P, W = self.paired, self.weak
        p_ratio, w_ratio = cfg.ratio
        use_weak = W is not None and w_ratio > 0
        weak_queue: list[np.ndarray] = []
        for i, idx in enumerate(self._batches(len(P), rng)):
            b = P.take(idx)
            order = []
            n_weak = ((i + 1) * w_ratio) // p_ratio - (i * w_ratio) // p_ratio if use_weak else 0
            weak_idx = []
            for _ in range(n_weak):
                if not weak_queue:
                    weak_queue = self._batches(len(W), weak_rng)
                weak_idx.append(weak_queue.pop(0))
            weak_in = [(W.x2d[j], *self._corrupt(W.x2d[j], weak_rng)) for j in weak_idx]

            # (a) generator / discriminators
            extra = None
            if weak_in and cfg.weak_reproj_to_disc:
                _, noisy, conf = weak_in[0]
                _, _, pred, intr, off = self._forward(noisy, conf)
                extra = dp.project(pred, intr, off, cfg.eps_depth_m).data
            step0 = self.state.step
            real2d = b.x2d
            if weak_in and cfg.weak_real_to_disc:
                real2d = np.concatenate([b.x2d, weak_in[0][0]])
            self._gan_step(3, epoch, b.x3d, real2d, b.intr, b.offset, rng, extra)
            order.append("gan")

            # (b) paired + augmented batch
            a3, a2, ai, ao = self._augmented(b.x3d, b.intr, b.offset, rng)
            clean = np.concatenate([b.x2d, a2])
            x3d = np.concatenate([b.x3d, a3])
            intr_gt = np.concatenate([b.intr, ai])
            off_gt = np.concatenate([b.offset, ao])
            noisy, conf = self._corrupt(clean, rng)
            refined, cn, pred, intr, off = self._forward(noisy, conf)
            comps = {"ref": L.refinement_loss(refined, clean, cn),
                     "cam": L.camera_loss(intr, off, intr_gt, off_gt),
                     "reproj": L.reprojection_loss(pred, intr, off, clean, cfg.eps_depth_m, strict=False),
                     "pose3d": L.pose3d_loss(pred, x3d)}
            loss = L.paired_total(comps, w)
            self._step(opt, loss, what="paired")
            order.append("paired")
            self._emit({"stage": 3, "epoch": epoch, "step": self.state.step, "phase": "paired", "lr": lr,
                        "n_aug": len(a3), **{k: v.item() for k, v in comps.items()}, "total": loss.item()})

            # (c) 2D-only batches
            for clean, noisy, conf in weak_in:
                refined, cn, pred, intr, off = self._forward(noisy, conf)
                comps = {"ref": L.refinement_loss(refined, clean, cn),
                         "reproj": L.reprojection_loss(pred, intr, off, clean, cfg.eps_depth_m, strict=False)}
                loss = L.weak_total(comps, w)
                self.weak_loss_components.update(comps)
                self._step(opt, loss, what="weak")
                self.state.weak_consumed += len(clean)
                order.append("weak")
                self._emit({"stage": 3, "epoch": epoch, "step": self.state.step, "phase": "weak", "lr": lr,
                            **{k: v.item() for k, v in comps.items()}, "total": loss.item()})
            self.update_order.append((step0, order))
        summary = {"stage": 3, "epoch": epoch}
        if self.val is not None:
            summary["val_mpjpe"] = self.val_mpjpe(use_refine=True)
            self._select(summary["val_mpjpe"], ("refine", "lifter", "camera"))
        return summary

    def _select(self, metric: float, heads: Sequence[str]):
        if not self.cfg.select_best:
            return
        if self.state.best_metric is None or metric < self.state.best_metric:
            self.state.best_metric = metric
            self.state.best_params = self._heads(*heads).to_dict()
            self.state.best_heads = list(heads)

    # -- driver ------------------------------------------------------------
    def run(self, stages: Sequence[int] = STAGES, stop_after: tuple[int, int] | None = None) -> Model:
        """Run ``stages`` in order, resuming from ``self.state``.

        ``stop_after=(stage, epoch)`` halts once that epoch is done (used to
        exercise checkpoint resume).
        """
        runners = {1: self._stage1_epoch, 2: self._stage2_epoch, 3: self._stage3_epoch}
        for s in sorted(stages):
            if s not in runners:
                raise ConfigError(f"unknown stage {s}")
            if s < self.state.stage:
                continue
            if s > self.state.stage:
                self.state = replace(self.state, stage=s, epoch=0, best_metric=None, best_params=None)
                self._reset_opts()
            sc = self.cfg.stage(s)
            while self.state.epoch < sc.epochs:
                e = self.state.epoch
                summary = runners[s](e)
                summary["step"] = self.state.step
                self.state.history.append(summary)
                self._emit({"summary": True, **summary})
                self.state.epoch += 1
                if self.out_dir and (self.state.epoch % self.cfg.checkpoint_every == 0
                                     or self.state.epoch == sc.epochs):
                    self.save_checkpoint()
                if stop_after == (s, e):
                    return self.model
            if self.state.best_params is not None:
                self._heads(*self.state.best_heads).load_dict(self.state.best_params)
                self.state.best_params = None
            if self.out_dir:
                name = {1: "refine", 2: "stage2", 3: "model"}[s]
                self.model.save(self.out_dir / f"{name}.json")
            # a stage is only "done" once the next one starts
            self.state = replace(self.state, stage=s + 1, epoch=0, best_metric=None)
            self._reset_opts()
        return self.model


def train(cfg: TrainConfig, paired, weak=(), val=None, stages=STAGES, out_dir=None, resume=None,
          init_model: Model | None = None) -> Trainer:
    """Convenience wrapper: build a :class:`Trainer`, optionally resume, run ``stages``."""
    tr = Trainer(cfg, paired, weak, val, out_dir, model=init_model)
    if resume:
        tr.load_checkpoint(resume)
    tr.run(stages)
    return tr
