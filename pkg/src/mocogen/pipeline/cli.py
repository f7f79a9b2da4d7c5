"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data/precondition error,
3 numeric failure. Every successful command appends one JSON line to
``<out>/manifest.jsonl`` with the config hash, seed and git-style blob
hashes of the files it wrote.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..body import export_obj, forward_kinematics, load_skeleton, rest_part_meshes, skin_mesh
from ..codec import CodecError, build_palette, decode_colors
from ..datagen import (
    FAMILY_NAMES,
    DatasetError,
    Renderer,
    SequenceSpec,
    generate_sequence,
    make_dataset,
    HELDOUT_SEED_BASE,
    read_dataset,
    write_dataset,
)
from ..latent import LatentError, encode_pixels
from ..raster import frontal_camera, load_png, save_png
from ..tensorad import CheckpointError, NonFiniteError
from .config import ConfigError, RunConfig
from .evaluate import ModelSampler, evaluate
from .train import (
    Checkpoint,
    PreconditionError,
    TrainingError,
    pretrain_video_branch,
    train_ablation,
    train_stage1,
    train_stage2,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ABLATIONS = ("no_motion", "normal_only", "semantics_only", "fused_to_motion", "distributed_copy", "joint_latent")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def blob_hash(data: bytes) -> str:
    """Content hash as computed by ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _manifest(out: Path, command: str, argv: list[str], run: RunConfig, seed: int, outputs: list[Path], extra: dict | None = None):
    entry = {
        "command": command,
        "argv": argv,
        "config_hash": run.digest(),
        "seed": seed,
        "outputs": {str(p.relative_to(out)) if p.is_relative_to(out) else str(p): blob_hash(p.read_bytes()) for p in outputs},
    }
    if extra:
        entry.update(extra)
    with open(out / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return entry


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mocogen", description="Coupled motion/video flow generation at desk scale.")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate train/held-out CMVD files")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-heldout", type=int)

    e = sub.add_parser("encode", help="encode one record's frames into latents")
    e.add_argument("--data", required=True)
    e.add_argument("--index", type=int, default=0)

    d = sub.add_parser("decode", help="decode a motion-frame PNG")
    d.add_argument("png")
    d.add_argument("--parts", type=int, default=8, help="palette size R")

    r = sub.add_parser("render", help="render one frame of a motion family")
    r.add_argument("--family", default="wave", help="family name or id")
    r.add_argument("--frame", type=int, default=0)

    for name, help_ in (("pretrain", "stage 0: pretrain the video branch"), ("train-stage1", "stage 1: adapt the motion branch"), ("train-stage2", "stage 2: joint training")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--data", required=True)
        t.add_argument("--steps", type=int, help="override the stage's step budget")
        t.add_argument("--resume", help="checkpoint of this stage to continue")
        if name != "pretrain":
            t.add_argument("--ckpt", help="previous-stage checkpoint")

    s = sub.add_parser("sample", help="sample one held-out record")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--steps", type=int)

    v = sub.add_parser("eval", help="evaluate a stage-2 checkpoint")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--records", type=int)

    a = sub.add_parser("ablate", help="short runs of every ablation switch")
    a.add_argument("--ckpt", required=True, help="stage-0 checkpoint")
    a.add_argument("--data", required=True)
    a.add_argument("--heldout", help="records to sample after training")
    a.add_argument("--steps", type=int)
    a.add_argument("--modes", nargs="*", choices=ABLATIONS, default=list(ABLATIONS))
    return p


def _load_run(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    return run


def _records(path):
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"dataset {p} does not exist")
    return read_dataset(p)


def _with_steps(run: RunConfig, stage: int, steps):
    if steps is None:
        return run
    key = f"stage{stage}"
    return replace(run, **{key: replace(getattr(run, key), steps=steps)})


def _progress(entry):
    if entry["step"] % 25 == 0:
        parts = " ".join(f"{k}={v:.4f}" for k, v in entry.items() if isinstance(v, float))
        print(f"step {entry['step']}: {parts}", flush=True)


def cmd_gen_data(args, run, out):
    n_train = args.n_train if args.n_train is not None else run.n_train
    n_held = args.n_heldout if args.n_heldout is not None else run.n_heldout
    cfg = run.model
    paths = []
    for name, n, base in (("train", n_train, 0), ("heldout", n_held, HELDOUT_SEED_BASE)):
        recs = make_dataset(n, base + run.seed, cfg.frames, cfg.height, cfg.width_px)
        path = out / f"{name}.cmvd"
        write_dataset(recs, path)
        paths.append(path)
        print(f"wrote {n} records to {path}")
    return paths, {}


def cmd_encode(args, run, out):
    recs = _records(args.data)
    if not 0 <= args.index < len(recs):
        raise DatasetError(f"record index {args.index} out of range (0..{len(recs) - 1})")
    r = recs[args.index]
    path = out / f"latent_{args.index}.npz"
    video = encode_pixels(r.rgb_frames.astype(np.float64))
    motion = encode_pixels(r.motion_frames.astype(np.float64))
    np.savez(path, video=video.data, motion=motion.data)
    print(f"latent shape {video.data.shape} -> {path}")
    return [path], {}


def cmd_decode(args, run, out):
    png = Path(args.png)
    if not png.exists():
        raise DatasetError(f"{png} does not exist")
    try:
        frame = load_png(png)
    except OSError as exc:
        raise DatasetError(f"cannot read {png}: {exc}") from None
    palette = build_palette(args.parts)
    covered = np.any(frame != 0, axis=-1)
    normals, parts, _, infeasible = decode_colors(frame, palette)
    fg = covered & ~infeasible
    ratio = float(fg.mean())
    counts = {int(k): int(v) for k, v in zip(*np.unique(parts[fg], return_counts=True))}
    print(f"coverage {100 * ratio:.2f}% ({int(fg.sum())} px); infeasible {int((covered & infeasible).sum())} px")
    for part, n in sorted(counts.items()):
        print(f"  part {part}: {n} px")
    path = out / f"{png.stem}_normals.png"
    vis = np.where(fg[..., None], (normals + 1) / 2, 0.0)
    save_png(vis, path)
    return [path], {"coverage": ratio}


def cmd_render(args, run, out):
    fam = int(args.family) if args.family.isdigit() else FAMILY_NAMES.index(args.family) if args.family in FAMILY_NAMES else None
    if fam is None:
        raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(FAMILY_NAMES)}")
    cfg = run.model
    spec = SequenceSpec(family=fam, F=cfg.frames, seed=run.seed, height=cfg.height, width=cfg.width_px)
    if not 0 <= args.frame < spec.F:
        raise UsageError(f"frame must lie in [0, {spec.F})")
    rec = generate_sequence(spec, Renderer(camera=frontal_camera(cfg.height, cfg.width_px)))
    mpath, rpath = out / f"{spec.family_name}_{args.frame}_motion.png", out / f"{spec.family_name}_{args.frame}_rgb.png"
    save_png(rec.motion_frames[args.frame], mpath)
    save_png(rec.rgb_frames[args.frame], rpath)
    skel = load_skeleton()
    opath = out / f"{spec.family_name}_{args.frame}.obj"
    mesh = skin_mesh(skel, forward_kinematics(skel, rec.pose(args.frame)), rest_part_meshes(skel))
    export_obj(mesh, opath)
    print(f"coverage {100 * rec.coverage[args.frame].mean():.2f}% -> {mpath}, {rpath}, {opath}")
    return [mpath, rpath, opath], {}


def _train_cmd(stage):
    def run_cmd(args, run, out):
        run = _with_steps(run, stage, args.steps)
        recs = _records(args.data)
        resume = getattr(args, "resume", None)
        if stage == 0:
            ck = pretrain_video_branch(run, recs, resume=resume, log=_progress)
        else:
            if args.ckpt is None and resume is None:
                raise PreconditionError(f"train-stage{stage} needs --ckpt with a stage-{stage - 1} checkpoint")
            fn = train_stage1 if stage == 1 else train_stage2
            ck = fn(run, recs, args.ckpt, resume=resume, log=_progress)
        path = out / f"stage{stage}.ckpt"
        ck.save(path)
        h = ck.history
        final = h[-1]["total"] if h else float("nan")
        print(f"stage {stage}: {ck.step} steps, final loss {final:.4f} -> {path}")
        return [path], {"steps": ck.step}

    return run_cmd


def cmd_sample(args, run, out):
    ck = Checkpoint.load(args.ckpt) if Path(args.ckpt).exists() else None
    if ck is None:
        raise PreconditionError(f"checkpoint {args.ckpt} does not exist")
    recs = _records(args.data)
    if not 0 <= args.index < len(recs):
        raise DatasetError(f"record index {args.index} out of range")
    steps = args.steps or run.sample_steps
    res = ModelSampler(ck.params, steps, run.cfg_scale).sample([recs[args.index]], [args.index], run.seed)
    path = out / f"sample_{args.index}.npz"
    arrays = {"video": res.video_frames[0], "motion": res.motion[0]}
    if res.motion_frames is not None:
        arrays["motion_frames"] = res.motion_frames[0]
    np.savez(path, **arrays)
    strip = out / f"sample_{args.index}.png"
    rows = [np.concatenate(list(np.clip(res.video_frames[0], 0, 1)), axis=1)]
    if res.motion_frames is not None:
        rows.append(np.concatenate(list(np.clip(res.motion_frames[0], 0, 1)), axis=1))
    save_png(np.concatenate(rows, axis=0), strip)
    print(f"sample -> {path}, {strip}")
    return [path, strip], {}


def cmd_eval(args, run, out):
    if not Path(args.ckpt).exists():
        raise PreconditionError(f"checkpoint {args.ckpt} does not exist")
    ck = Checkpoint.load(args.ckpt)
    recs = _records(args.data)[: args.records or run.eval_records]
    rep = evaluate(ModelSampler(ck.params, run.sample_steps, run.cfg_scale), recs, run.seed, run.eval_batch, history=ck.history)
    path = out / "metrics.jsonl"
    with open(path, "a") as fh:
        fh.write(json.dumps({"checkpoint": str(args.ckpt), **rep.to_dict()}, sort_keys=True) + "\n")
    print(rep.summary())
    return [path], {}


def cmd_ablate(args, run, out):
    recs = _records(args.data)
    held = _records(args.heldout)[:2] if args.heldout else recs[:2]
    results = []
    for mode in args.modes:
        mrun = replace(run, ablation=mode)
        ck = train_ablation(mrun, recs, args.ckpt, steps=args.steps)
        losses = ck.history[-1]
        res = ModelSampler(ck.params, min(run.sample_steps, 4), run.cfg_scale).sample(held, list(range(len(held))), run.seed)
        ok = bool(np.isfinite(res.video_frames).all() and np.isfinite(res.motion).all())
        results.append({"mode": mode, "steps": ck.step, "final": losses, "sample_finite": ok})
        print(f"{mode}: {ck.step} steps, total {losses['total']:.4f}, sample finite: {ok}")
    path = out / "ablations.jsonl"
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return [path], {}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "render": cmd_render,
    "pretrain": _train_cmd(0),
    "train-stage1": _train_cmd(1),
    "train-stage2": _train_cmd(2),
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        run = _load_run(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs, extra = COMMANDS[args.command](args, run, out)
        _manifest(out, args.command, argv, run, run.seed, outputs, extra)
        return EXIT_OK
    except UsageError as exc:
        parser.print_help(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, PreconditionError, CheckpointError, ConfigError, CodecError, LatentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
