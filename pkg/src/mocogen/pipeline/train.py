"""Stage-0 video pretraining and the two model training stages.

Every step draws its batch indices, times, noise, condition dropout and
layer selection from ``default_rng([seed, stage, step])``, so a run resumed
from any checkpoint retraces the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..datagen import TripletRecord
from ..dualflow import DualModelParams, LossBreakdown, ModelConfig, dual_forward, expand_to_dual, sample_layers, total_loss, video_forward
from ..dualflow.model import init_video_model
from ..tensorad import AdamWConfig, NonFiniteError, OptimizerState, Tape, backward, clip_and_step, getitem, load_checkpoint, mse, save_checkpoint
from .batches import Batch, make_batch
from .config import RunConfig

OPT_PREFIX = "__opt__."
CHECKPOINT_KIND = "mocogen-model"


class TrainingError(RuntimeError):
    """Non-finite loss or gradient; carries the failing step."""

    def __init__(self, stage: int, step: int, detail: str):
        self.stage, self.step = stage, step
        super().__init__(f"stage {stage} step {step}: {detail}")


class PreconditionError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: DualModelParams
    meta: dict = field(default_factory=dict)
    opt: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def stage(self) -> int | None:
        return self.meta.get("stage")

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    @property
    def history(self) -> list[dict]:
        return self.meta.get("history", [])

    def save(self, path) -> None:
        arrays = dict(self.params.arrays())
        arrays.update({OPT_PREFIX + k: v for k, v in self.opt.items()})
        save_checkpoint(path, arrays, self.meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise PreconditionError(f"{path} is not a model checkpoint")
        cfg = ModelConfig.from_dict(meta["model"])
        params = {k: v for k, v in arrays.items() if not k.startswith(OPT_PREFIX)}
        opt = {k[len(OPT_PREFIX):]: v for k, v in arrays.items() if k.startswith(OPT_PREFIX)}
        return cls(DualModelParams.from_arrays(cfg, params), meta, opt)


def trainable_prefixes(stage: int, mode: str) -> tuple[str, ...]:
    if stage == 0:
        return ("video.",)
    if stage == 1:
        return ("motion.",)
    if mode == "no_motion":
        return ("video.",)  # nothing else exists to adapt
    if mode == "joint_latent":
        return ("joint.", "A.")
    return ("motion.", "fuse.", "A.")


def frozen_prefixes(stage: int, mode: str) -> tuple[str, ...]:
    if stage == 0:
        return ()
    if stage == 2 and mode in ("no_motion", "joint_latent"):
        return ()
    return ("video.",)


# --- per-step draws -------------------------------------------------------------------


@dataclass
class StepDraw:
    index: np.ndarray
    t: np.ndarray
    eps_video: np.ndarray | None
    eps_motion: np.ndarray | None
    dropped: np.ndarray
    layers: tuple[int, ...]


def draw_step(run: RunConfig, stage: int, step: int, n_records: int) -> StepDraw:
    cfg, sc = run.model, run.stage(stage)
    rng = np.random.default_rng([run.seed, stage, step])
    B = sc.batch
    index = rng.choice(n_records, B, replace=n_records < B)
    t = rng.uniform(size=B)
    shape = (B, cfg.tokens, cfg.channels)
    eps_v = rng.standard_normal(shape) if stage in (0, 2) else None
    eps_m = rng.standard_normal(shape) if stage in (1, 2) and cfg.mode != "no_motion" else None
    dropped = rng.uniform(size=B) < run.cond_dropout
    layers = sample_layers(cfg, rng, run.layer_count) if stage == 2 else ()
    return StepDraw(index, t, eps_v, eps_m, dropped, layers)


def noisy_tokens(x0: np.ndarray, eps: np.ndarray, t: np.ndarray, clean: int) -> np.ndarray:
    """Token-layout noising; the first ``clean`` tokens (frame-0 slice) stay exact."""
    tb = t.reshape(-1, 1, 1)
    x_t = (1.0 - tb) * eps + tb * x0
    x_t[:, :clean] = x0[:, :clean]
    return x_t


def step_loss(P: DualModelParams, stage: int, batch: Batch, draw: StepDraw, sel: np.ndarray) -> LossBreakdown:
    cfg = P.config
    hw = cfg.hw
    t = draw.t[sel]
    cond = np.where(draw.dropped[sel, None], cfg.null_token, batch.cond)
    keep = (slice(None), slice(hw, None))

    if stage in (0, 1):
        x0 = batch.video if stage == 0 else batch.motion
        eps = (draw.eps_video if stage == 0 else draw.eps_motion)[sel]
        x_t = noisy_tokens(x0, eps, t, hw)
        if stage == 0:
            v = video_forward(P, x_t, t, cond)
        else:
            v = video_forward(P, x_t, t, cond, pre="motion.", blocks=cfg.motion_blocks())
        L = mse(getitem(v, keep), (x0 - eps)[keep])
        val = L.item()
        return LossBreakdown(L, val if stage == 1 else None, val if stage == 0 else None, None)

    xv = noisy_tokens(batch.video, draw.eps_video[sel], t, hw)
    has_motion = draw.eps_motion is not None
    xm = noisy_tokens(batch.motion, draw.eps_motion[sel], t, hw) if has_motion else None
    out = dual_forward(P, xm, xv, cond, t, batch.m0, layers=draw.layers or None)
    return total_loss(
        out.v_motion,
        (batch.motion - draw.eps_motion[sel]) if has_motion else None,
        out.v_video,
        batch.video - draw.eps_video[sel],
        out.motion_preds,
        batch.gt_motion,
        hw,
    )


# --- the loop -----------------------------------------------------------------------------


def _optimizer(run: RunConfig, stage: int, params) -> OptimizerState:
    sc = run.stage(stage)
    return OptimizerState.create(
        params,
        AdamWConfig(
            lr=sc.lr, beta1=sc.beta1, beta2=sc.beta2, weight_decay=sc.weight_decay,
            max_grad_norm=sc.max_grad_norm, warmup_steps=sc.warmup,
        ),
    )


def accumulated_gradients(P, params, stage, batch: Batch, draw: StepDraw, accumulate: int):
    """Gradients of the batch-mean loss, summed over ``accumulate`` micro-batches."""
    B = len(draw.index)
    grads = [np.zeros_like(p.data) for p in params]
    comps = {"total": 0.0, "motion": None, "video": None, "smpl": None}
    for chunk in np.array_split(np.arange(B), accumulate):
        w = len(chunk) / B
        with Tape() as tape:
            L = step_loss(P, stage, batch.take(chunk), draw, chunk)
        backward(tape, L.total, params)
        for g, p in zip(grads, params):
            g += w * p.grad
        for k, v in L.as_dict().items():
            if v is not None:
                comps[k] = (comps[k] or 0.0) + w * v
    return grads, comps


def run_stage(
    stage: int,
    run: RunConfig,
    records: list[TripletRecord],
    start: Checkpoint,
    log: Callable[[dict], None] | None = None,
    stop_after: int | None = None,
) -> Checkpoint:
    """Train ``start.params`` for the stage budget (continuing from ``start.step``
    when ``start`` already belongs to this stage)."""
    sc = run.stage(stage)
    P = start.params.copy()
    mode = P.config.mode
    params = P.set_trainable(*trainable_prefixes(stage, mode))
    frozen = frozen_prefixes(stage, mode)
    frozen_digest = P.digest(*frozen) if frozen else None
    state = _optimizer(run, stage, params)
    names = [k for k, t in P.tensors.items() if t.requires_grad]
    resuming = start.stage == stage and start.meta.get("run") == run.digest()
    history = list(start.history) if resuming else []
    first = start.step if resuming else 0
    if resuming and start.opt:
        state.m = [start.opt["m." + n].copy() for n in names]
        state.v = [start.opt["v." + n].copy() for n in names]
        state.step = int(start.meta["opt_step"])
    last = sc.steps if stop_after is None else min(sc.steps, stop_after)
    for step in range(first, last):
        draw = draw_step(run, stage, step, len(records))
        batch = make_batch([records[i] for i in draw.index], mode)
        try:
            grads, comps = accumulated_gradients(P, params, stage, batch, draw, sc.accumulate)
            norm = clip_and_step(state, params, grads)
        except NonFiniteError as exc:
            raise TrainingError(stage, step + 1, str(exc)) from None
        entry = {"step": step + 1, **comps, "grad_norm": norm, "lr": state.lr_at(state.step)}
        history.append(entry)
        if log:
            log(entry)
    if frozen_digest is not None and P.digest(*frozen) != frozen_digest:
        raise TrainingError(stage, last, "frozen parameters changed")
    for t in P.tensors.values():
        t.requires_grad = False
    meta = {
        "kind": CHECKPOINT_KIND,
        "stage": stage,
        "step": last,
        "opt_step": state.step,
        "model": P.config.to_dict(),
        "run": run.digest(),
        "parent": start.params.digest(),
        "frozen": list(frozen),
        "frozen_digest": frozen_digest,
        "history": history,
    }
    opt = {}
    for n, m, v in zip(names, state.m, state.v):
        opt["m." + n] = m
        opt["v." + n] = v
    return Checkpoint(P, meta, opt)


def _as_checkpoint(src) -> Checkpoint:
    if isinstance(src, Checkpoint):
        return src
    path = Path(src)
    if not path.exists():
        raise PreconditionError(f"checkpoint {path} does not exist")
    return Checkpoint.load(path)


def _initial(P: DualModelParams) -> Checkpoint:
    return Checkpoint(P, {"kind": CHECKPOINT_KIND, "stage": None, "step": 0, "model": P.config.to_dict()})


def pretrain_video_branch(run: RunConfig, records, resume=None, log=None, stop_after=None) -> Checkpoint:
    start = _as_checkpoint(resume) if resume is not None else _initial(init_video_model(run.model, run.seed))
    if resume is not None and start.stage != 0:
        raise PreconditionError("resume checkpoint is not a stage-0 checkpoint")
    return run_stage(0, run, records, start, log, stop_after)


def train_stage1(run: RunConfig, records, video_ckpt, resume=None, log=None, stop_after=None) -> Checkpoint:
    if run.model.mode in ("no_motion", "joint_latent"):
        raise PreconditionError(f"mode {run.model.mode!r} has no separate motion branch to adapt")
    if resume is not None:
        start = _as_checkpoint(resume)
        if start.stage != 1:
            raise PreconditionError("resume checkpoint is not a stage-1 checkpoint")
    else:
        video = _as_checkpoint(video_ckpt)
        if video.stage != 0:
            raise PreconditionError("stage 1 needs a stage-0 (video pretraining) checkpoint")
        start = _initial(expand_to_dual(video.params, run.model, run.seed))
    return run_stage(1, run, records, start, log, stop_after)


def train_stage2(run: RunConfig, records, stage1_ckpt, resume=None, log=None, stop_after=None) -> Checkpoint:
    if resume is not None:
        start = _as_checkpoint(resume)
        if start.stage != 2:
            raise PreconditionError("resume checkpoint is not a stage-2 checkpoint")
    else:
        start = _as_checkpoint(stage1_ckpt)
        if start.stage != 1:
            raise PreconditionError("stage 2 needs a checkpoint produced by stage 1")
    return run_stage(2, run, records, start, log, stop_after)


def train_ablation(run: RunConfig, records, video_ckpt, steps: int | None = None, log=None) -> Checkpoint:
    """Short stage-2 run of ``run.ablation`` starting from the pretrained video branch."""
    video = _as_checkpoint(video_ckpt)
    if video.stage != 0:
        raise PreconditionError("ablations start from a stage-0 checkpoint")
    start = _initial(expand_to_dual(video.params, run.model, run.seed))
    return run_stage(2, run, records, start, log, stop_after=steps or run.ablation_steps)


def smoothed(history: list[dict], key: str = "total", start: int = 0, window: int = 10) -> float:
    vals = [h[key] for h in history[start : start + window]]
    return float(np.mean(vals))


def tail_mean(history: list[dict], key: str = "total", window: int = 50) -> float:
    return float(np.mean([h[key] for h in history[-window:]]))
