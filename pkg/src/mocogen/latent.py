"""Parameter-free invertible latent codec with 4x temporal and 16x spatial compression.

Frames are grouped as ``[0, 0, 0, 0], [1..4], [5..8], ...`` (frame 0 is
replicated so every temporal token has the same channel count). Each
group's ``4 x 16 x 16 x 3`` block over one spatial cell is flattened into
3072 channels in time, y, x, channel order, and values are mapped from
[0, 1] to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIME_STRIDE = 4
PATCH = 16
CHANNELS = 3 * TIME_STRIDE * PATCH * PATCH  # 3072


class LatentError(ValueError):
    pass


def latent_shape(F: int, H: int, W: int) -> tuple[int, int, int, int]:
    check_geometry(F, H, W)
    return (CHANNELS, (F - 1) // TIME_STRIDE + 1, H // PATCH, W // PATCH)


def check_geometry(F: int, H: int, W: int) -> None:
    if F < 5 or (F - 1) % TIME_STRIDE:
        raise LatentError(f"frame count must be 1 mod 4 and >= 5, got {F}")
    if H <= 0 or W <= 0 or H % PATCH or W % PATCH:
        raise LatentError(f"frame size must be a positive multiple of 16, got {H}x{W}")


@dataclass(frozen=True)
class LatentBlock:
    data: np.ndarray  # (C, T, h, w)
    F: int
    H: int
    W: int

    def __post_init__(self):
        if self.data.shape != latent_shape(self.F, self.H, self.W):
            raise LatentError(
                f"latent shape {self.data.shape} does not match geometry F={self.F} H={self.H} W={self.W}"
            )

    @property
    def T(self) -> int:
        return self.data.shape[1]


def _group_index(F: int) -> np.ndarray:
    return np.concatenate([np.zeros(TIME_STRIDE, dtype=np.int64), np.arange(1, F)])


def encode_pixels(frames: np.ndarray) -> LatentBlock:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise LatentError(f"expected F x H x W x 3 frames, got {frames.shape}")
    F, H, W, _ = frames.shape
    check_geometry(F, H, W)
    T, h, w = (F - 1) // TIME_STRIDE + 1, H // PATCH, W // PATCH
    grouped = frames[_group_index(F)] * 2.0 - 1.0  # (4T, H, W, 3)
    x = grouped.reshape(T, TIME_STRIDE, h, PATCH, w, PATCH, 3)
    # -> (tt, py, px, c) channel order per (T, h, w) cell
    x = x.transpose(1, 3, 5, 6, 0, 2, 4).reshape(CHANNELS, T, h, w)
    return LatentBlock(np.ascontiguousarray(x), F, H, W)


def decode_pixels(latent: LatentBlock) -> np.ndarray:
    C, T, h, w = latent.data.shape
    x = latent.data.reshape(TIME_STRIDE, PATCH, PATCH, 3, T, h, w)
    x = x.transpose(4, 0, 5, 1, 6, 2, 3).reshape(T * TIME_STRIDE, h * PATCH, w * PATCH, 3)
    frames = (x[TIME_STRIDE - 1 :] + 1.0) / 2.0  # first group -> its first replicate
    frames[0] = (x[0] + 1.0) / 2.0
    return frames


def encode_batch(frames: np.ndarray) -> np.ndarray:
    """(B, F, H, W, 3) -> (B, C, T, h, w) without the block wrapper."""
    return np.stack([encode_pixels(f).data for f in frames])


def decode_batch(latents: np.ndarray, F: int, H: int, W: int) -> np.ndarray:
    return np.stack([decode_pixels(LatentBlock(z, F, H, W)) for z in latents])


def to_tokens(latents: np.ndarray) -> np.ndarray:
    """(B, C, T, h, w) -> (B, T, h*w, C)."""
    B, C, T, h, w = latents.shape
    return latents.reshape(B, C, T, h * w).transpose(0, 2, 3, 1)


def from_tokens(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    B, T, N, C = tokens.shape
    return tokens.transpose(0, 3, 1, 2).reshape(B, C, T, h, w)
