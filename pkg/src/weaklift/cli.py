"""Command line: ``weaklift {synth,train,eval,project}``.

Every command writes its outputs under ``--out`` together with the fully
resolved configuration (``config.json``) and a ``manifest.json`` listing the
files with their checksums.

Exit codes: 0 success, 1 input/output problem, 2 configuration error,
3 training aborted by the numeric watchdog.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (CameraParams, SampleRecord, SynthConfig, camera_from_internal, generate_synthetic,
                   read_dataset, write_dataset)
from .errors import ConfigError, InvariantViolation, ParseError, TrainingAborted, WeakLiftError
from .evaluation import evaluate, network_input, project_normalized
from .losses import normalize_confidence
from .nets import Model
from .skeleton import NUM_JOINTS, SKELETON, denormalize_2d
from .train import STAGES, TrainConfig, Trainer, load_config

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, invocation: dict):
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    _write_json(out / "manifest.json", {
        "command": command, "version": __version__, "invocation": invocation,
        "files": [{"path": str(p.relative_to(out)), "bytes": p.stat().st_size, "sha256": _sha256(p)}
                  for p in files],
    })


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(args, msg: str):
    if args.verbose >= 0:
        print(msg)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            base = json.load(f)
    overrides = {"n_samples": args.n, "seed": args.seed, "weak_fraction": args.weak_fraction,
                 "ood_weak": args.ood_weak or None, "noise_sigma": args.noise_sigma}
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "n_samples" not in base or "seed" not in base:
        raise ConfigError("synth needs --n and --seed (or both in --config)")
    cfg = SynthConfig.from_dict(base)
    paired, weak = generate_synthetic(cfg)
    out = _out_dir(args.out)
    write_dataset(paired, out / "paired.jsonl")
    write_dataset(weak, out / "weak.jsonl")
    _write_json(out / "config.json", cfg.to_dict())
    write_manifest(out, "synth", vars_json(args))
    if paired:
        j3 = np.stack([r.joints3d_mm for r in paired])
        depth = np.array([r.camera.offset.tz for r in paired])
        _log(args, f"paired={len(paired)} weak={len(weak)} "
                   f"mean_bone_mm={np.linalg.norm(j3[:, 1:] - j3[:, SKELETON.parents[1:]], axis=-1).mean():.1f} "
                   f"depth_mm=[{depth.min():.0f}, {depth.max():.0f}]")
    else:
        _log(args, f"paired=0 weak={len(weak)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, model=replace(cfg.model, seed=args.seed))
    cfg.validate()
    paired = read_dataset(args.paired)
    weak = read_dataset(args.weak) if args.weak else []
    val = read_dataset(args.val) if args.val else None
    stages = STAGES if args.stage == "all" else (int(args.stage),)
    out = _out_dir(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    log_path = out / "log.jsonl"
    mode = "a" if args.resume else "w"
    init = Model.load(args.init) if args.init else None
    with open(log_path, mode, encoding="utf-8") as log_file:
        def sink(rec):
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            if args.verbose > 0 and rec.get("summary"):
                print(json.dumps(rec, sort_keys=True))

        tr = Trainer(cfg, paired, weak, val, out, model=init, log_sink=sink)
        if args.resume:
            tr.load_checkpoint(args.resume)
        try:
            tr.run(stages)
        except TrainingAborted as e:
            print(f"training aborted: {e}", file=sys.stderr)
            return EXIT_ABORT
    write_manifest(out, "train", vars_json(args))
    last = tr.state.history[-1] if tr.state.history else {}
    _log(args, f"done: stages={list(stages)} steps={tr.state.step} last={json.dumps(last, sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    model = Model.load(args.model)
    records = read_dataset(args.data)
    source = "corrupted" if args.corrupt_sigma > 0 else "clean"
    report = evaluate(model, records, use_refine=args.use_refine, input_source=source,
                      corrupt_sigma=args.corrupt_sigma, seed=args.seed, dataset_tag=Path(args.data).name)
    out = _out_dir(args.out)
    report.save(out / "report.json")
    _write_json(out / "config.json", {"model": str(args.model), "data": str(args.data),
                                      "use_refine": args.use_refine, "corrupt_sigma": args.corrupt_sigma,
                                      "seed": args.seed})
    write_manifest(out, "eval", vars_json(args))
    print(report.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# project

_SVG_COLOURS = (("input", "#888888"), ("refined", "#1f77b4"), ("reprojected", "#d62728"))


def skeleton_svg(poses_px: dict[str, np.ndarray], image_wh, size: int = 400) -> str:
    """Static SVG of one or more 2D skeletons drawn in image coordinates."""
    w, h = image_wh
    k = size / max(w, h)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * k:.0f}" height="{h * k:.0f}" '
             f'viewBox="0 0 {w:.1f} {h:.1f}">',
             f'<rect width="{w:.1f}" height="{h:.1f}" fill="white" stroke="black"/>']
    for name, colour in _SVG_COLOURS:
        if name not in poses_px:
            continue
        p = poses_px[name]
        for j in range(1, NUM_JOINTS):
            a, b = p[SKELETON.parents[j]], p[j]
            parts.append(f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                         f'stroke="{colour}" stroke-width="{2 / k:.2f}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_project(args) -> int:
    model = Model.load(args.model)
    records = read_dataset(args.data)
    if not records:
        raise ConfigError("project needs at least one record")
    x_in, conf, _ = network_input(records, "clean", 0.0, 0)
    n = len(records)
    refined = model.refine_np(x_in.reshape(n, NUM_JOINTS, 2), normalize_confidence(conf))
    pred = model.lift_np(refined)
    intr, off_mm = model.camera_np(refined.reshape(n, -1))
    reproj = project_normalized(pred, intr, off_mm)
    out = _out_dir(args.out)
    dump = []
    errors = []
    for i, r in enumerate(records):
        w, h = r.image_wh
        err = float(np.linalg.norm(reproj[i] - x_in[i].reshape(NUM_JOINTS, 2), axis=-1).mean())
        errors.append(err)
        cam = camera_from_internal(intr[i], off_mm[i] / 1000.0, r.image_wh)
        extra = {"refined2d_px": denormalize_2d(refined[i], w, h).tolist(),
                 "reprojected2d_px": denormalize_2d(reproj[i], w, h).tolist(),
                 "reprojection_error_norm": err, "source_id": r.id}
        dump.append(SampleRecord(id=r.id, joints2d_px=r.joints2d_px, conf=r.conf, image_wh=r.image_wh,
                                 joints3d_mm=pred[i], camera=CameraParams(cam.intrinsics, cam.offset),
                                 source_tag="projection", extra=extra))
    write_dataset(dump, out / "projection.jsonl")
    if args.plots > 0:
        plots = out / "plots"
        plots.mkdir(exist_ok=True)
        for i in range(min(args.plots, n)):
            r, d = records[i], dump[i]
            svg = skeleton_svg({"input": r.joints2d_px, "refined": np.array(d.extra["refined2d_px"]),
                                "reprojected": np.array(d.extra["reprojected2d_px"])}, r.image_wh)
            (plots / f"{i:05d}.svg").write_text(svg, encoding="utf-8")
    _write_json(out / "config.json", {"model": str(args.model), "data": str(args.data), "plots": args.plots})
    write_manifest(out, "project", vars_json(args))
    _log(args, f"samples={n} mean_reprojection_error_norm={np.mean(errors):.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def vars_json(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weaklift", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (only 1 is supported)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", dest="verbose", action="store_const", const=-1)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic paired and 2D-only datasets")
    p.add_argument("--n", type=int, help="total number of records")
    p.add_argument("--seed", type=int)
    p.add_argument("--weak-fraction", type=float, help="share of records written as 2D-only")
    p.add_argument("--ood-weak", action="store_true", help="draw 2D-only poses from widened angle ranges")
    p.add_argument("--noise-sigma", type=float, help="2D keypoint noise std in pixels")
    p.add_argument("--config", help="JSON file with SynthConfig fields; flags override it")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="run the training stages")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--paired", required=True)
    p.add_argument("--weak")
    p.add_argument("--val", help="held-out paired records (default: split from --paired)")
    p.add_argument("--stage", choices=("all", "1", "2", "3"), default="all")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--init", help="model file to start from")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="MPJPE / PA-MPJPE on a paired dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--use-refine", action="store_true", help="pass the 2D input through the refinement head")
    p.add_argument("--corrupt-sigma", type=float, default=0.0,
                   help="noise std added to the clean 2D input, in normalized image units (0 = clean)")
    p.add_argument("--seed", type=int, default=0, help="seed for the input corruption")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", parents=[common], help="dump predictions and their reprojection")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--plots", type=int, default=0, help="number of SVG skeleton plots to write")
    p.set_defaults(func=cmd_project)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads != 1:
        print("only --threads 1 is supported", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, InvariantViolation) as e:
        print(f"input/output error: {e}", file=sys.stderr)
        return EXIT_IO
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    except WeakLiftError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
