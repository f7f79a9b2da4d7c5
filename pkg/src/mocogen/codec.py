"""Normal + body-part color code.

Blue and green carry the x and y normal components mapped affinely to [0, 1].
Red selects one of ``2R`` evenly spaced values: index ``2r`` for part ``r``
with a non-negative normal z, ``2r + 1`` when z is negative. Decoding picks
the nearest red candidate and rebuilds ``|z|`` from the unit-length identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MAX_PARTS = 32
INFEASIBLE_SLACK = 0.05


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class PartPalette:
    num_parts: int
    red_list: tuple[float, ...]

    def __post_init__(self):
        if len(self.red_list) != 2 * self.num_parts:
            raise CodecError("palette must hold exactly 2R values")
        if any(b <= a for a, b in zip(self.red_list, self.red_list[1:])):
            raise CodecError("palette values must be strictly increasing")

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.red_list, dtype=np.float64)

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.values)))


def build_palette(num_parts: int) -> PartPalette:
    if not 1 <= num_parts <= MAX_PARTS:
        # 1/(2R-1) must stay above 4/255 for 8-bit decoding
        raise CodecError(f"part count must be in [1, {MAX_PARTS}], got {num_parts}")
    n = 2 * num_parts
    return PartPalette(num_parts, tuple(k / (n - 1) for k in range(n)))


class MotionColor(NamedTuple):
    red: float
    green: float
    blue: float


class Decoded(NamedTuple):
    normal: np.ndarray
    part: int
    sign: int
    infeasible: bool


def encode_colors(normals: np.ndarray, parts: np.ndarray, palette: PartPalette) -> np.ndarray:
    """Vectorized encode: normals (..., 3), parts (...) -> colors (..., 3) as (R, G, B)."""
    normals = np.asarray(normals, dtype=np.float64)
    parts = np.asarray(parts)
    norm = np.linalg.norm(normals, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-4):
        raise CodecError("normals must be unit length (tolerance 1e-4)")
    if np.any(parts < 0) or np.any(parts >= palette.num_parts):
        raise CodecError("part index out of range")
    back = normals[..., 2] < 0  # -0.0 < 0 is False, so zero counts as front
    idx = 2 * parts.astype(np.int64) + back
    out = np.empty(normals.shape, dtype=np.float64)
    out[..., 0] = palette.values[idx]
    out[..., 1] = (normals[..., 1] + 1.0) / 2.0
    out[..., 2] = (normals[..., 0] + 1.0) / 2.0
    return out


def decode_colors(colors: np.ndarray, palette: PartPalette):
    """Vectorized decode of (..., 3) colors.

    Returns ``(normals, parts, signs, infeasible)``.
    """
    colors = np.asarray(colors, dtype=np.float64)
    if np.any(colors < 0) or np.any(colors > 1):
        raise CodecError("colors must lie in [0, 1]")
    x = 2.0 * colors[..., 2] - 1.0
    y = 2.0 * colors[..., 1] - 1.0
    vals = palette.values
    # nearest candidate; argmin returns the first (lowest) index on ties
    k = np.argmin(np.abs(colors[..., 0, None] - vals), axis=-1)
    parts = k // 2
    signs = np.where(k % 2 == 0, 1, -1)
    xy2 = x * x + y * y
    infeasible = xy2 > 1.0 + INFEASIBLE_SLACK
    z = signs * np.sqrt(np.maximum(0.0, 1.0 - xy2))
    normals = np.stack([x, y, z], axis=-1)
    norm = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.where(norm > 0, norm, 1.0)
    return normals, parts, signs, infeasible


def encode_color(normal, part: int, palette: PartPalette) -> MotionColor:
    r, g, b = encode_colors(np.asarray(normal, dtype=np.float64)[None], np.array([part]), palette)[0]
    return MotionColor(float(r), float(g), float(b))


def decode_color(color, palette: PartPalette) -> Decoded:
    normals, parts, signs, infeasible = decode_colors(np.asarray(color, dtype=np.float64)[None], palette)
    return Decoded(normals[0], int(parts[0]), int(signs[0]), bool(infeasible[0]))


def quantize8(colors: np.ndarray) -> np.ndarray:
    return np.round(np.clip(colors, 0.0, 1.0) * 255.0) / 255.0


def remap_representation(frames: np.ndarray, palette: PartPalette, mode: str) -> np.ndarray:
    """Strip one factor from motion frames for representation ablations.

    ``normal_only`` flattens red to the front candidate of part 0 (normal
    sign then becomes unrecoverable); ``semantics_only`` replaces the normal
    channels with the facing-camera value 0.5. Background stays black.
    """
    frames = np.asarray(frames)
    covered = np.any(frames != 0, axis=-1)
    out = frames.copy()
    if mode == "normal_only":
        out[..., 0] = np.where(covered, palette.values[1] * 0.5, 0.0)
    elif mode == "semantics_only":
        out[..., 1] = np.where(covered, 0.5, 0.0)
        out[..., 2] = np.where(covered, 0.5, 0.0)
    elif mode != "full":
        raise CodecError(f"unknown representation mode {mode!r}")
    return out
