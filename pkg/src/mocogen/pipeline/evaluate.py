"""Desk-scale metrics: pose error of sampled motion, part-IoU and PSNR."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..body import Skeleton, keypoints, load_skeleton
from ..codec import build_palette, decode_colors
from ..datagen import TripletRecord
from ..dualflow import DualModelParams, dual_forward, latents_to_tokens, sample, tokens_to_latents
from ..latent import decode_batch, encode_batch
from .batches import make_batch, motion_frames_for
from .train import noisy_tokens

PSNR_CAP = 60.0
RECON_T = 0.5


def mpjpe(skeleton: Skeleton, pred: np.ndarray, gt: np.ndarray, root: np.ndarray) -> float:
    """Mean keypoint distance (m) between two rotation sequences sharing the GT root path."""
    a = keypoints(skeleton, pred, root)
    b = keypoints(skeleton, gt, root)
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def part_labels(frames: np.ndarray, palette, coverage: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel part ids of motion frames, -1 for background/undecodable pixels."""
    frames = np.clip(frames, 0.0, 1.0)
    _, parts, _, infeasible = decode_colors(frames, palette)
    fg = ~infeasible if coverage is None else coverage
    return np.where(fg, parts, -1)


def part_iou(pred_parts: np.ndarray, gt_parts: np.ndarray) -> float:
    ious = []
    for p in np.union1d(np.unique(pred_parts), np.unique(gt_parts)):
        if p < 0:
            continue
        a, b = pred_parts == p, gt_parts == p
        ious.append((a & b).sum() / (a | b).sum())
    return float(np.mean(ious)) if ious else 1.0


def psnr(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray, cap: float = PSNR_CAP) -> float:
    if not mask.any():
        return float("nan")
    err = np.mean((np.clip(pred, 0, 1)[mask] - gt[mask]) ** 2)
    if err <= 10.0 ** (-cap / 10.0):
        return cap
    return float(min(cap, -10.0 * np.log10(err)))


# --- models under evaluation --------------------------------------------------------------


class ModelSampler:
    """Samples and teacher-forced reconstructions from trained parameters."""

    def __init__(self, P: DualModelParams, steps: int, cfg_scale: float):
        self.P, self.steps, self.cfg_scale = P, steps, cfg_scale

    def sample(self, records: list[TripletRecord], ids, seed: int):
        mode = self.P.config.mode
        return sample(
            self.P,
            np.stack([r.poses[0] for r in records]).astype(np.float64),
            np.stack([r.rgb_frames[0] for r in records]).astype(np.float64),
            np.stack([motion_frames_for(r, mode)[0] for r in records]),
            np.array([r.cond for r in records]),
            steps=self.steps,
            cfg_scale=self.cfg_scale,
            seed=seed,
            item_ids=ids,
        )

    def reconstruct(self, records, ids, seed: int):
        """Clean estimate ``x_t + (1 - t) v`` at ``t = 0.5`` for both modalities."""
        cfg = self.P.config
        b = make_batch(records, cfg.mode)
        eps = [np.random.default_rng([seed, int(i), 0xE7A1]).standard_normal((2,) + b.video.shape[1:]) for i in ids]
        eps_v = np.stack([e[0] for e in eps])
        eps_m = np.stack([e[1] for e in eps])
        t = np.full(len(records), RECON_T)
        xv = noisy_tokens(b.video, eps_v, t, cfg.hw)
        has_motion = cfg.mode != "no_motion"
        xm = noisy_tokens(b.motion, eps_m, t, cfg.hw) if has_motion else None
        out = dual_forward(self.P, xm, xv, b.cond, t, b.m0, predict_motion=False)
        h, w = cfg.height // 16, cfg.width_px // 16

        def frames(x, v):
            return decode_batch(tokens_to_latents(x + (1 - RECON_T) * v.data, cfg.T, h, w), cfg.frames, cfg.height, cfg.width_px)

        return frames(xv, out.v_video), (frames(xm, out.v_motion) if has_motion else None)


class OracleSampler:
    """Replays ground truth; the metric ceiling."""

    def sample(self, records, ids, seed):
        from ..dualflow import SampleResult

        rgb = np.stack([r.rgb_frames for r in records]).astype(np.float64)
        mot = np.stack([r.motion_frames for r in records]).astype(np.float64)
        return SampleResult(rgb, mot, np.stack([r.poses[1:] for r in records]).astype(np.float64), encode_batch(rgb), encode_batch(mot))

    def reconstruct(self, records, ids, seed):
        return (
            np.stack([r.rgb_frames for r in records]).astype(np.float64),
            np.stack([r.motion_frames for r in records]).astype(np.float64),
        )


@dataclass
class MetricsReport:
    n_records: int
    mpjpe: float
    mpjpe_std: float
    static_mpjpe: float
    static_mpjpe_std: float
    part_iou: float
    part_iou_std: float
    psnr: float
    psnr_std: float
    coverage_ratio: float
    losses: dict = field(default_factory=dict)
    per_record: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"records={self.n_records} MPJPE={self.mpjpe:.4f}±{self.mpjpe_std:.4f} m "
            f"(static {self.static_mpjpe:.4f}) part-IoU={self.part_iou:.3f}±{self.part_iou_std:.3f} "
            f"PSNR={self.psnr:.2f}±{self.psnr_std:.2f} dB coverage={self.coverage_ratio:.3f}"
        )


def evaluate(
    model,
    heldout: list[TripletRecord],
    seed: int = 0,
    batch: int = 16,
    skeleton: Skeleton | None = None,
    history: list[dict] | None = None,
) -> MetricsReport:
    """Score ``model`` (a :class:`ModelSampler` or :class:`OracleSampler`) on held-out records."""
    skeleton = skeleton or load_skeleton()
    rows = []
    for start in range(0, len(heldout), batch):
        recs = heldout[start : start + batch]
        ids = list(range(start, start + len(recs)))
        out = model.sample(recs, ids, seed)
        rgb_rec, mot_rec = model.reconstruct(recs, ids, seed)
        for k, r in enumerate(recs):
            palette = build_palette(r.palette_parts)
            gt_rot = r.poses[1:].astype(np.float64)
            root = r.root_translation[1:].astype(np.float64)
            static = np.repeat(r.poses[:1].astype(np.float64), len(gt_rot), axis=0)
            gt_cov = r.coverage[1:]
            gt_parts = part_labels(r.motion_frames[1:].astype(np.float64), palette, gt_cov)
            row = {
                "seed": r.spec.seed,
                "family": r.spec.family,
                "mpjpe": mpjpe(skeleton, out.motion[k], gt_rot, root),
                "static_mpjpe": mpjpe(skeleton, static, gt_rot, root),
            }
            if out.motion_frames is not None:
                pred_parts = part_labels(out.motion_frames[k, 1:], palette)
                row["part_iou"] = part_iou(pred_parts, gt_parts)
                row["coverage"] = float((pred_parts >= 0).mean())
            else:
                row["part_iou"] = float("nan")
                row["coverage"] = float("nan")
            joint = gt_cov
            if mot_rec is not None:
                joint = joint & (part_labels(mot_rec[k, 1:], palette) >= 0)
            row["psnr"] = psnr(rgb_rec[k, 1:], r.rgb_frames[1:].astype(np.float64), joint)
            rows.append(row)

    def stat(key):
        v = np.array([r[key] for r in rows], dtype=np.float64)
        return float(np.mean(v)), float(np.std(v))

    losses = {}
    if history:
        for key in ("total", "motion", "video", "smpl"):
            vals = [h[key] for h in history[-50:] if h.get(key) is not None]
            if vals:
                losses[key] = float(np.mean(vals))
    m, ms = stat("mpjpe")
    s, ss = stat("static_mpjpe")
    iou, ious = stat("part_iou")
    p, ps = stat("psnr")
    cov, _ = stat("coverage")
    return MetricsReport(len(rows), m, ms, s, ss, iou, ious, p, ps, cov, losses, rows)
