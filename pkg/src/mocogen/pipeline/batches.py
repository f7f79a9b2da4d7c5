"""Turn triplet records into latent-token training batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import build_palette, remap_representation
from ..datagen import TripletRecord
from ..dualflow import latents_to_tokens
from ..latent import encode_batch

REPRESENTATION = {"normal_only": "normal_only", "semantics_only": "semantics_only"}


@dataclass
class Batch:
    video: np.ndarray  # (B, N, C) clean tokens
    motion: np.ndarray  # (B, N, C)
    cond: np.ndarray  # (B, n_cond) int64
    m0: np.ndarray  # (B, J, 3)
    gt_motion: np.ndarray  # (B, F-1, J, 3)

    def take(self, idx) -> "Batch":
        return Batch(self.video[idx], self.motion[idx], self.cond[idx], self.m0[idx], self.gt_motion[idx])


def motion_frames_for(record: TripletRecord, mode: str) -> np.ndarray:
    frames = record.motion_frames.astype(np.float64)
    rep = REPRESENTATION.get(mode)
    if rep is None:
        return frames
    return remap_representation(frames, build_palette(record.palette_parts), rep)


def make_batch(records: list[TripletRecord], mode: str = "full") -> Batch:
    rgb = np.stack([r.rgb_frames.astype(np.float64) for r in records])
    mot = np.stack([motion_frames_for(r, mode) for r in records])
    poses = np.stack([r.poses.astype(np.float64) for r in records])
    return Batch(
        video=latents_to_tokens(encode_batch(rgb)),
        motion=latents_to_tokens(encode_batch(mot)),
        cond=np.array([r.cond for r in records], dtype=np.int64),
        m0=poses[:, 0],
        gt_motion=poses[:, 1:],
    )
