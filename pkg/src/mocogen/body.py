"""Toy articulated body: kinematic chain, capsule skinning, normals and part labels.

The body stands in for SMPL. Joint rotations are axis-angle 3-vectors, one per
joint, and the root additionally carries a world translation. Each body part
is a capsule rigidly attached to one joint, so part labels never straddle a
triangle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

SKELETON_SCHEMA = "mocogen.skeleton/1"


class BodyError(ValueError):
    """Invalid skeleton, pose or mesh input."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class CapsulePart:
    """Capsule primitive in the local frame of ``joint``.

    The core segment runs from ``start`` to ``start + length * axis``; the
    surface sits at distance ``radius`` from it.
    """

    name: str
    joint: int
    radius: float
    length: float
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    segments: int = 12
    rings: int = 4


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    parts: tuple[CapsulePart, ...]
    name: str = "skeleton"

    def __post_init__(self):
        if not self.joints:
            raise BodyError("skeleton has no joints")
        if self.joints[0].parent is not None:
            raise BodyError("joint 0 must be the root (parent null)")
        for j, joint in enumerate(self.joints[1:], start=1):
            if joint.parent is None or not 0 <= joint.parent < j:
                raise BodyError(f"joint {j} ({joint.name}): parent must precede it")
        if len(self.parts) > len(self.joints):
            raise BodyError("more parts than joints")
        for part in self.parts:
            if not 0 <= part.joint < len(self.joints):
                raise BodyError(f"part {part.name} references missing joint {part.joint}")
            if part.radius <= 0:
                raise BodyError(f"part {part.name}: capsule radius must be > 0")
            if part.length < 0 or part.segments < 3 or part.rings < 1:
                raise BodyError(f"part {part.name}: bad tessellation parameters")

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    @property
    def parents(self) -> list[int | None]:
        return [j.parent for j in self.joints]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "schema": SKELETON_SCHEMA,
            "name": self.name,
            "joints": [
                {"name": j.name, "parent": j.parent, "offset": list(j.offset)}
                for j in self.joints
            ],
            "parts": [
                {
                    "name": p.name,
                    "joint": p.joint,
                    "radius": p.radius,
                    "length": p.length,
                    "start": list(p.start),
                    "axis": list(p.axis),
                    "segments": p.segments,
                    "rings": p.rings,
                }
                for p in self.parts
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Skeleton":
        if data.get("schema", SKELETON_SCHEMA) != SKELETON_SCHEMA:
            raise BodyError(f"unsupported skeleton schema {data.get('schema')!r}")
        joints = tuple(
            Joint(j["name"], j["parent"], tuple(float(v) for v in j["offset"]))
            for j in data["joints"]
        )
        parts = tuple(
            CapsulePart(
                name=p["name"],
                joint=int(p["joint"]),
                radius=float(p["radius"]),
                length=float(p["length"]),
                start=tuple(float(v) for v in p.get("start", (0, 0, 0))),
                axis=tuple(float(v) for v in p.get("axis", (0, 1, 0))),
                segments=int(p.get("segments", 12)),
                rings=int(p.get("rings", 4)),
            )
            for p in data["parts"]
        )
        return cls(joints=joints, parts=parts, name=data.get("name", "skeleton"))


def load_skeleton(path: str | Path | None = None) -> Skeleton:
    """Load a skeleton config; ``None`` or a bundled name gives a shipped config."""
    if path is None:
        path = "toy8"
    if str(path) in ("toy8", "toy24"):
        fname = {"toy8": "skeleton_j8.json", "toy24": "skeleton_j24.json"}[str(path)]
        text = resources.files("mocogen.data").joinpath(fname).read_text()
    else:
        text = Path(path).read_text()
    return Skeleton.from_dict(json.loads(text))


def save_skeleton(skeleton: Skeleton, path: str | Path) -> None:
    Path(path).write_text(json.dumps(skeleton.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class PoseVector:
    rotations: np.ndarray  # (J, 3) axis-angle
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotations, dtype=np.float64)
        trans = np.array(self.root_translation, dtype=np.float64)
        if rot.ndim != 2 or rot.shape[1] != 3 or trans.shape != (3,):
            raise BodyError(f"bad pose shapes {rot.shape}, {trans.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise BodyError("pose contains non-finite values")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "root_translation", trans)

    @classmethod
    def rest(cls, num_joints: int) -> "PoseVector":
        return cls(np.zeros((num_joints, 3)), np.zeros(3))

    def canonical(self) -> "PoseVector":
        return PoseVector(canonicalize_axis_angle(self.rotations), self.root_translation)


def canonicalize_axis_angle(rotvecs: np.ndarray) -> np.ndarray:
    """Wrap rotation angles into (-pi, pi] so magnitudes never exceed pi."""
    rotvecs = np.asarray(rotvecs, dtype=np.float64)
    angle = np.linalg.norm(rotvecs, axis=-1, keepdims=True)
    safe = np.where(angle > 0, angle, 1.0)
    axis = rotvecs / safe
    wrapped = np.mod(angle + np.pi, 2 * np.pi) - np.pi  # (-pi, pi]
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return np.where(angle > 0, axis * wrapped, 0.0)


def rotation_matrices(rotvecs: np.ndarray) -> np.ndarray:
    """Rodrigues formula for a batch of axis-angle vectors (..., 3) -> (..., 3, 3)."""
    rotvecs = np.asarray(rotvecs, dtype=np.float64)
    theta = np.linalg.norm(rotvecs, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    k = rotvecs / safe[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack(
        [
            np.stack([zero, -kz, ky], -1),
            np.stack([kz, zero, -kx], -1),
            np.stack([-ky, kx, zero], -1),
        ],
        -2,
    )
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + c * (K @ K)
    return np.where(small[..., None, None], eye, R)


@dataclass(frozen=True)
class JointTransforms:
    """World-frame rigid transforms, one 4x4 matrix per joint."""

    matrices: np.ndarray  # (J, 4, 4)

    @property
    def rotations(self) -> np.ndarray:
        return self.matrices[:, :3, :3]

    @property
    def positions(self) -> np.ndarray:
        return self.matrices[:, :3, 3]


def forward_kinematics(skeleton: Skeleton, pose: PoseVector) -> JointTransforms:
    rot = pose.rotations
    if rot.shape != (skeleton.num_joints, 3):
        raise BodyError(
            f"pose has {rot.shape[0]} rotations, skeleton has {skeleton.num_joints} joints"
        )
    local_R = rotation_matrices(rot)
    offsets = skeleton.offsets
    out = np.zeros((skeleton.num_joints, 4, 4))
    for j, parent in enumerate(skeleton.parents):
        local = np.eye(4)
        local[:3, :3] = local_R[j]
        local[:3, 3] = offsets[j]
        if parent is None:
            local[:3, 3] += pose.root_translation
            out[j] = local
        else:
            out[j] = out[parent] @ local
    out.setflags(write=False)
    return JointTransforms(out)


def _world_frames(skeleton: Skeleton, poses: np.ndarray, root_translation: np.ndarray | None):
    poses = np.asarray(poses, dtype=np.float64)
    n = poses.shape[0]
    if root_translation is None:
        root_translation = np.zeros((n, 3))
    R = rotation_matrices(poses)
    offsets = skeleton.offsets
    world_R = np.zeros_like(R)
    world_p = np.zeros(poses.shape)
    for j, parent in enumerate(skeleton.parents):
        if parent is None:
            world_R[:, j] = R[:, j]
            world_p[:, j] = offsets[j] + root_translation
        else:
            world_R[:, j] = world_R[:, parent] @ R[:, j]
            world_p[:, j] = world_p[:, parent] + world_R[:, parent] @ offsets[j]
    return world_R, world_p


def joint_positions(skeleton: Skeleton, poses: np.ndarray, root_translation: np.ndarray | None = None) -> np.ndarray:
    """Batched FK positions for rotations of shape (N, J, 3); returns (N, J, 3)."""
    return _world_frames(skeleton, poses, root_translation)[1]


def keypoints(skeleton: Skeleton, poses: np.ndarray, root_translation: np.ndarray | None = None) -> np.ndarray:
    """Joint positions followed by the far end of every part's core segment: (N, J + R, 3).

    Leaf-joint rotations move no joint, only the limb ends, so position
    errors over joints alone would ignore them.
    """
    world_R, world_p = _world_frames(skeleton, poses, root_translation)
    tips = []
    for part in skeleton.parts:
        local = np.asarray(part.start) + part.length * np.asarray(part.axis)
        tips.append(world_p[:, part.joint] + world_R[:, part.joint] @ local)
    return np.concatenate([world_p, np.stack(tips, axis=1)], axis=1)


@dataclass(frozen=True)
class BodyMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (M, 3) int
    vertex_normals: np.ndarray  # (V, 3)
    vertex_parts: np.ndarray  # (V,) int
    face_parts: np.ndarray  # (M,) int
    flagged: int = 0


def capsule_mesh(part: CapsulePart) -> tuple[np.ndarray, np.ndarray]:
    """Closed capsule in joint-local coordinates, outward CCW winding.

    The cylinder body is split into two rows so a mid-height ring exists;
    its area-weighted normals are exactly perpendicular to the axis.
    """
    axis = np.asarray(part.axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    r, h, n, k = part.radius, part.length, part.segments, part.rings

    # profile rings as (height along axis, ring radius); poles added separately
    profile = []
    for i in range(1, k + 1):
        phi = -np.pi / 2 + i * (np.pi / 2) / k
        profile.append((r * np.sin(phi), r * np.cos(phi)))
    profile.append((h / 2, r))
    for i in range(0, k):
        phi = i * (np.pi / 2) / k
        profile.append((h + r * np.sin(phi), r * np.cos(phi)))

    ang = 2 * np.pi * np.arange(n) / n
    ring_dirs = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v
    start = np.asarray(part.start, dtype=np.float64)
    verts = [start - r * axis]
    for z, rad in profile:
        verts.extend(start + z * axis + rad * ring_dirs)
    verts.append(start + (h + r) * axis)
    verts = np.array(verts)

    faces = []
    bottom, top = 0, len(verts) - 1
    nrings = len(profile)

    def idx(ring, s):
        return 1 + ring * n + (s % n)

    for s in range(n):
        faces.append((bottom, idx(0, s + 1), idx(0, s)))
    for ring in range(nrings - 1):
        for s in range(n):
            a, b = idx(ring, s), idx(ring, s + 1)
            c, d = idx(ring + 1, s), idx(ring + 1, s + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for s in range(n):
        faces.append((top, idx(nrings - 1, s), idx(nrings - 1, s + 1)))
    faces = np.array(faces, dtype=np.int64)

    # the (u, v, axis) frame orientation decides winding; flip if it faces inward
    tri = verts[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    core = start + np.clip(((tri.mean(1) - start) @ axis), 0, h)[:, None] * axis
    if np.sum(np.einsum("ij,ij->i", fn, tri.mean(1) - core)) < 0:
        faces = faces[:, ::-1].copy()
    return verts, faces


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted vertex normals.

    Returns ``(normals, flags)``; ``flags`` marks vertices whose accumulated
    normal vanished (fold-over) and were assigned +z.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    tri = vertices[faces]
    # unnormalized cross product has length 2*area, which is the area weighting
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros_like(vertices)
    for c in range(3):
        np.add.at(acc, faces[:, c], fn)
    norm = np.linalg.norm(acc, axis=1)
    flags = norm <= 1e-300
    safe = np.where(flags, 1.0, norm)
    normals = acc / safe[:, None]
    normals[flags] = (0.0, 0.0, 1.0)
    return normals, flags


def rest_part_meshes(skeleton: Skeleton) -> list[tuple[np.ndarray, np.ndarray]]:
    return [capsule_mesh(p) for p in skeleton.parts]


def skin_mesh(
    skeleton: Skeleton,
    transforms: JointTransforms,
    _cache: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> BodyMesh:
    parts = _cache if _cache is not None else rest_part_meshes(skeleton)
    verts, faces, vparts, fparts = [], [], [], []
    base = 0
    for r, (part, (lv, lf)) in enumerate(zip(skeleton.parts, parts)):
        M = transforms.matrices[part.joint]
        verts.append(lv @ M[:3, :3].T + M[:3, 3])
        faces.append(lf + base)
        vparts.append(np.full(len(lv), r, dtype=np.int64))
        fparts.append(np.full(len(lf), r, dtype=np.int64))
        base += len(lv)
    V = np.concatenate(verts)
    F = np.concatenate(faces)
    normals, flags = vertex_normals(V, F)
    return BodyMesh(
        vertices=V,
        faces=F,
        vertex_normals=normals,
        vertex_parts=np.concatenate(vparts),
        face_parts=np.concatenate(fparts),
        flagged=int(flags.sum()),
    )


def pose_mesh(skeleton: Skeleton, pose: PoseVector, cache=None) -> BodyMesh:
    return skin_mesh(skeleton, forward_kinematics(skeleton, pose), cache)


def export_obj(mesh: BodyMesh, path: str | Path) -> None:
    """ASCII OBJ; each face is preceded by a ``# part <r>`` comment when the part changes."""
    lines = ["# mocogen body mesh"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"vn {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertex_normals]
    current = None
    for (a, b, c), part in zip(mesh.faces, mesh.face_parts):
        if part != current:
            lines.append(f"# part {int(part)}")
            current = part
        a, b, c = a + 1, b + 1, c + 1
        lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def edge_counts(faces: Sequence[Sequence[int]]) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for f in faces:
        for i in range(3):
            a, b = int(f[i]), int(f[(i + 1) % 3])
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    return counts
