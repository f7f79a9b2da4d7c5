"""Software rasterizer for motion frames and shaded RGB frames.

The triangle loop lives in a compiled extension (``_core``); when it is not
built, or ``MOCOGEN_PURE_PYTHON=1`` is set, the numpy loop in ``_fallback``
is used instead. Both produce identical buffers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..body import BodyMesh
from ..codec import PartPalette, encode_colors
from . import _fallback

if os.environ.get("MOCOGEN_PURE_PYTHON") == "1":
    _kernel = _fallback.rasterize
    KERNEL = "python"
else:
    try:
        from ._core import rasterize as _kernel

        KERNEL = "compiled"
    except ImportError:  # extension not built
        _kernel = _fallback.rasterize
        KERNEL = "python"

NEAR = 1e-4
AMBIENT = 0.15
BACKGROUND = 0.35


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Camera space: x right, y down, z forward (depth)."""

    focal: float
    principal: tuple[float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.focal <= 0:
            raise RasterError("focal length must be positive")
        if self.height % 16 or self.width % 16 or self.height <= 0 or self.width <= 0:
            raise RasterError("image size must be a positive multiple of 16")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "principal": list(self.principal),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "height": self.height,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            focal=float(d["focal"]),
            principal=tuple(d["principal"]),
            rotation=np.array(d["rotation"]),
            translation=np.array(d["translation"]),
            height=int(d["height"]),
            width=int(d["width"]),
        )


def frontal_camera(height: int = 64, width: int = 64, distance: float = 3.4, focal: float | None = None) -> Camera:
    """Camera on the world +z axis looking back at a y-up body centred near y=0.95."""
    if focal is None:
        focal = 1.45 * height  # ~1.8m body spans ~80% of the frame at 3.4m
    rotation = np.diag([1.0, -1.0, -1.0])
    eye = np.array([0.0, 0.95, distance])
    return Camera(
        focal=float(focal),
        principal=(width / 2.0, height / 2.0),
        rotation=rotation,
        translation=-rotation @ eye,
        height=height,
        width=width,
    )


def project(camera: Camera, points: np.ndarray):
    """Project world points (..., 3). Returns ``(pixels (..., 2), depth (...), valid (...))``."""
    pc = camera.to_camera(points)
    depth = pc[..., 2]
    valid = depth > NEAR
    safe = np.where(valid, depth, 1.0)
    px = camera.focal * pc[..., 0] / safe + camera.principal[0]
    py = camera.focal * pc[..., 1] / safe + camera.principal[1]
    return np.stack([px, py], axis=-1), depth, valid


@dataclass(frozen=True)
class Fragments:
    face_id: np.ndarray  # (H, W), -1 where uncovered
    bary: np.ndarray  # (H, W, 3) perspective-correct
    depth: np.ndarray
    normals: np.ndarray  # (H, W, 3) camera-space unit normals, zero where uncovered
    parts: np.ndarray  # (H, W), -1 where uncovered

    @property
    def coverage(self) -> np.ndarray:
        return self.face_id >= 0


def rasterize(mesh: BodyMesh, camera: Camera) -> Fragments:
    pix, depth, _ = project(camera, mesh.vertices)
    screen = np.ascontiguousarray(np.concatenate([pix, depth[:, None]], axis=1))
    cam_normals = mesh.vertex_normals @ camera.rotation.T
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    draw = ~np.all(cam_normals[faces][..., 2] > 0, axis=1)
    face_id, bary, zbuf = _kernel(
        screen, faces, np.ascontiguousarray(draw, dtype=np.uint8), camera.height, camera.width, NEAR
    )
    covered = face_id >= 0
    normals = np.zeros((camera.height, camera.width, 3))
    parts = np.full((camera.height, camera.width), -1, dtype=np.int64)
    if covered.any():
        fid = face_id[covered]
        tri_n = cam_normals[faces[fid]]  # (P, 3, 3)
        n = np.einsum("pk,pkc->pc", bary[covered], tri_n)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        # opposite vertex normals can cancel on razor-thin faces; fall back to the face's first vertex
        bad = norm[:, 0] < 1e-9
        n[bad] = tri_n[bad, 0]
        norm[bad] = 1.0
        normals[covered] = n / norm
        parts[covered] = mesh.face_parts[fid]
    return Fragments(face_id, bary, zbuf, normals, parts)


@dataclass(frozen=True)
class MotionFrame:
    pixels: np.ndarray  # (H, W, 3)
    coverage: np.ndarray  # (H, W) bool

    @property
    def coverage_ratio(self) -> float:
        return float(self.coverage.mean())


def rasterize_motion_frame(mesh: BodyMesh, camera: Camera, palette: PartPalette, fragments: Fragments | None = None) -> MotionFrame:
    frag = fragments if fragments is not None else rasterize(mesh, camera)
    cov = frag.coverage
    pixels = np.zeros((camera.height, camera.width, 3))
    if cov.any():
        pixels[cov] = encode_colors(frag.normals[cov], frag.parts[cov], palette)
    return MotionFrame(pixels, cov)


def render_shaded_frame(
    mesh: BodyMesh,
    camera: Camera,
    light_dir: np.ndarray,
    albedo_per_part: np.ndarray,
    fragments: Fragments | None = None,
) -> np.ndarray:
    """Lambertian shading in camera space; ``light_dir`` points from the light into the scene."""
    frag = fragments if fragments is not None else rasterize(mesh, camera)
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    out = np.full((camera.height, camera.width, 3), BACKGROUND)
    cov = frag.coverage
    if cov.any():
        albedo = np.asarray(albedo_per_part, dtype=np.float64)[frag.parts[cov]]
        lam = np.maximum(0.0, frag.normals[cov] @ (-light))
        out[cov] = np.clip(albedo * lam[:, None] + AMBIENT, 0.0, 1.0)
    return out


def shade_normals(normals: np.ndarray, albedo: np.ndarray, light_dir: np.ndarray) -> np.ndarray:
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lam = np.maximum(0.0, np.asarray(normals) @ (-light))
    return np.clip(np.asarray(albedo) * lam[..., None] + AMBIENT, 0.0, 1.0)


def save_png(frame: np.ndarray, path) -> None:
    """8-bit PNG export; lossy beyond the codec's 8-bit guarantees."""
    from PIL import Image

    data = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
