"""Seeded Euler integration of the learned velocity field with classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..latent import decode_batch, encode_batch
from .model import DualModelParams, ModelError, dual_forward, latents_to_tokens, tokens_to_latents


def guided_velocity(v_cond: np.ndarray, v_null: np.ndarray, cfg_scale: float) -> np.ndarray:
    if cfg_scale == 1.0:
        return v_cond
    return v_null + cfg_scale * (v_cond - v_null)


def euler_sample(
    velocity: Callable[[np.ndarray, float], np.ndarray],
    x_init: np.ndarray,
    steps: int,
    pin: Callable[[np.ndarray], None] | None = None,
) -> np.ndarray:
    """Integrate ``dx/dt = velocity(x, t)`` from t=0 to 1 in uniform steps.

    ``pin`` rewrites the noise-free conditioning entries of each iterate in
    place (before the first step and after every step).
    """
    if steps < 1:
        raise ModelError("steps must be >= 1")
    x = np.array(x_init, dtype=np.float64)
    pin = pin or (lambda _: None)
    pin(x)
    dt = 1.0 / steps
    for i in range(steps):
        x = x + dt * velocity(x, i * dt)
        pin(x)
    return x


@dataclass
class SampleResult:
    video_frames: np.ndarray  # (B, F, H, W, 3), unclamped
    motion_frames: np.ndarray | None
    motion: np.ndarray  # (B, F-1, J, 3)
    video_latent: np.ndarray  # (B, C, T, h, w)
    motion_latent: np.ndarray | None


def _first_frame_tokens(frames0: np.ndarray, F: int, hw: int) -> np.ndarray:
    B, H, W, _ = frames0.shape
    padded = np.zeros((B, F, H, W, 3))
    padded[:, 0] = frames0
    return latents_to_tokens(encode_batch(padded))[:, :hw]


def sample(
    P: DualModelParams,
    m0: np.ndarray,
    s0_frame: np.ndarray,
    k0_frame: np.ndarray | None,
    cond: np.ndarray,
    steps: int = 50,
    cfg_scale: float = 6.0,
    seed: int | None = None,
    item_ids=None,
) -> SampleResult:
    """Generate video, motion frames and 3D motion for a batch of first frames.

    ``m0`` is ``(B, J, 3)``; frames are ``(B, H, W, 3)``; ``cond`` is
    ``(B, n_cond)`` tokens. Noise for item ``b`` comes from
    ``default_rng([seed, item_ids[b], k])`` (``item_ids`` defaults to
    ``0..B-1``), so a record's sample does not depend on how items are batched.
    """
    if seed is None:
        raise ModelError("sample() requires an explicit seed")
    cfg = P.config
    m0 = np.asarray(m0, dtype=np.float64)
    s0_frame = np.asarray(s0_frame, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.int64)
    if m0.ndim == 2:
        m0, s0_frame, cond = m0[None], s0_frame[None], cond[None]
        k0_frame = None if k0_frame is None else np.asarray(k0_frame)[None]
    B = m0.shape[0]
    ids = [int(i) for i in (range(B) if item_ids is None else item_ids)]
    F, hw, N, C = cfg.frames, cfg.hw, cfg.tokens, cfg.channels
    h, w = cfg.height // 16, cfg.width_px // 16
    has_motion = cfg.mode != "no_motion"

    clean_v = _first_frame_tokens(s0_frame, F, hw)
    noise_v = np.stack([np.random.default_rng([seed, i, 0]).standard_normal((N, C)) for i in ids])
    if has_motion:
        if k0_frame is None:
            raise ModelError("motion sampling needs the first motion frame")
        clean_m = _first_frame_tokens(np.asarray(k0_frame, dtype=np.float64), F, hw)
        noise_m = np.stack([np.random.default_rng([seed, i, 1]).standard_normal((N, C)) for i in ids])
        x = np.concatenate([noise_v, noise_m], axis=1)
        clean = np.concatenate([clean_v, clean_m], axis=1)
    else:
        x, clean = noise_v, clean_v

    null = np.full_like(cond, cfg.null_token)
    last_preds: dict = {}

    def split(x):
        # video tokens then motion tokens, each with the clean slice first
        return x[:, :N], (x[:, N:] if has_motion else None)

    last_t = (steps - 1) * (1.0 / steps)  # same expression the integrator uses

    def velocity(xs, t):
        xv, xm = split(xs)
        guided = cfg_scale != 1.0
        # only the final step's motion is returned, so module A runs there alone
        final = t == last_t
        if guided:
            xv2 = np.concatenate([xv, xv])
            xm2 = None if xm is None else np.concatenate([xm, xm])
            out = dual_forward(P, xm2, xv2, np.concatenate([cond, null]), t, np.concatenate([m0, m0]), predict_motion=final)
        else:
            out = dual_forward(P, xm, xv, cond, t, m0, predict_motion=final)
        vv = out.v_video.data
        vm = out.v_motion.data if out.v_motion is not None else None
        if out.motion_preds:
            last_preds["m"] = out.motion_preds[out.final_layer].data[:B]
        if guided:
            vv = guided_velocity(vv[:B], vv[B:], cfg_scale)
            vm = None if vm is None else guided_velocity(vm[:B], vm[B:], cfg_scale)
        return np.concatenate([vv, vm], axis=1) if vm is not None else vv

    def pin(x):
        x[:, :hw] = clean_v
        if has_motion:
            x[:, N : N + hw] = clean_m

    x = euler_sample(velocity, x, steps, pin)
    xv, xm = split(x)
    video_latent = tokens_to_latents(xv, cfg.T, h, w)
    video_frames = decode_batch(video_latent, F, cfg.height, cfg.width_px)
    motion_latent = motion_frames = None
    if has_motion:
        motion_latent = tokens_to_latents(xm, cfg.T, h, w)
        motion_frames = decode_batch(motion_latent, F, cfg.height, cfg.width_px)
    if "m" in last_preds:
        motion = last_preds["m"].reshape(B, F - 1, cfg.joints, 3)
    else:
        motion = np.repeat(m0[:, None], F - 1, axis=1)
    return SampleResult(video_frames, motion_frames, motion, video_latent, motion_latent)

