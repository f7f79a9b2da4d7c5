"""Synthetic (condition, 3D motion, motion frames, RGB frames) triplets and the CMVD container.

Each motion family drives a few joints with sums of sinusoids that start at
the rest pose. Per-record amplitude and frequency jitter comes from the
record seed, so a record is fully determined by its ``SequenceSpec``.

CMVD byte layout (all integers little-endian)::

    b"CMVD" | u32 version | u64 header length | header (UTF-8 JSON) | payload

The header holds the skeleton config, the palette, and one index entry per
record listing ``(offset, shape)`` for each f32 tensor relative to the
payload start. Tensors are raw little-endian f32 in C order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .body import PoseVector, Skeleton, load_skeleton, rest_part_meshes, skin_mesh, forward_kinematics
from .codec import PartPalette, build_palette
from .raster import Camera, frontal_camera, rasterize, rasterize_motion_frame, render_shaded_frame

MAGIC = b"CMVD"
VERSION = 1
FPS = 16
VOCAB_SIZE = 16
NULL_TOKEN = VOCAB_SIZE  # reserved extra embedding row for classifier-free guidance
TEMPO_SLOW, TEMPO_FAST = 8, 9
LIGHT_DIR = np.array([-0.4, 0.6, 1.0])  # camera space, pointing into the scene
ALBEDO = np.array(
    [
        [0.55, 0.35, 0.25],
        [0.80, 0.30, 0.30],
        [0.85, 0.45, 0.30],
        [0.95, 0.80, 0.65],
        [0.30, 0.55, 0.85],
        [0.25, 0.75, 0.55],
        [0.40, 0.40, 0.75],
        [0.75, 0.70, 0.30],
    ]
)

# joint indices of the toy skeleton
PELVIS, SPINE, CHEST, HEAD, L_ARM, R_ARM, L_LEG, R_LEG = range(8)
ARM_CHAIN = (L_ARM, R_ARM)
LEG_CHAIN = (L_LEG, R_LEG)

# family -> list of (joint, axis, amplitude rad, frequency Hz); root y translation in metres for squat
FAMILIES: dict[str, list[tuple[int, int, float, float]]] = {
    "wave": [(R_ARM, 2, -0.8, 0.3), (R_ARM, 2, -0.15, 0.9)],
    "squat": [(L_LEG, 0, -0.7, 0.35), (R_LEG, 0, -0.7, 0.35), (SPINE, 0, 0.25, 0.35)],
    "twist": [(SPINE, 1, 0.5, 0.4), (CHEST, 1, 0.35, 0.4), (HEAD, 1, 0.25, 0.4)],
    "lean": [(SPINE, 2, 0.45, 0.3), (CHEST, 2, 0.2, 0.3), (HEAD, 2, -0.2, 0.3)],
    "march": [(L_LEG, 0, -0.5, 0.6), (R_LEG, 0, 0.5, 0.6), (L_ARM, 0, 0.3, 0.6), (R_ARM, 0, -0.3, 0.6)],
    "reach": [(L_ARM, 0, -1.1, 0.3), (R_ARM, 0, -1.1, 0.3)],
    "kick": [(R_LEG, 0, -0.9, 0.35), (L_ARM, 2, 0.3, 0.35), (R_ARM, 2, -0.3, 0.35)],
    "bow": [(SPINE, 0, 0.6, 0.3), (CHEST, 0, 0.3, 0.3), (HEAD, 0, 0.2, 0.3)],
}
FAMILY_NAMES = tuple(FAMILIES)
ROOT_DROP = {"squat": 0.18}
AMP_JITTER = (0.8, 1.2)
FREQ_JITTER = (0.9, 1.1)


class DatasetError(Exception):
    """Base class for container errors (CLI exit code 2)."""


class FormatError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


class ContainerIndexError(DatasetError):
    pass


class GenerationError(DatasetError):
    pass


@dataclass(frozen=True)
class SequenceSpec:
    family: int
    F: int = 17
    seed: int = 0
    amplitude: float = 1.0
    fps: int = FPS
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if not 0 <= self.family < min(len(FAMILY_NAMES), VOCAB_SIZE):
            raise GenerationError(f"family id {self.family} outside the vocabulary")
        if self.F < 5 or self.F > 81 or (self.F - 1) % 4:
            raise GenerationError(f"F must be 1 mod 4 in [5, 81], got {self.F}")

    @property
    def family_name(self) -> str:
        return FAMILY_NAMES[self.family]


@dataclass
class TripletRecord:
    spec: SequenceSpec
    poses: np.ndarray  # (F, J, 3) f32 axis-angle
    root_translation: np.ndarray  # (F, 3) f32
    motion_frames: np.ndarray  # (F, H, W, 3) f32
    rgb_frames: np.ndarray  # (F, H, W, 3) f32
    camera: Camera
    cond: tuple[int, ...] = field(default=())
    palette_parts: int = 8

    TENSORS = ("poses", "root_translation", "motion_frames", "rgb_frames")

    @property
    def coverage(self) -> np.ndarray:
        return np.any(self.motion_frames != 0, axis=-1)

    def pose(self, i: int) -> PoseVector:
        return PoseVector(self.poses[i].astype(np.float64), self.root_translation[i].astype(np.float64))


def family_parameters(spec: SequenceSpec) -> list[tuple[int, int, float, float]]:
    rng = np.random.default_rng([spec.seed, spec.family, 0xC0DE])
    out = []
    for joint, axis, amp, freq in FAMILIES[spec.family_name]:
        a = amp * rng.uniform(*AMP_JITTER) * spec.amplitude
        f = freq * rng.uniform(*FREQ_JITTER)
        out.append((joint, axis, a, f))
    return out


def tempo_token(spec: SequenceSpec) -> int:
    params = family_parameters(spec)
    base = FAMILIES[spec.family_name]
    ratio = np.mean([p[3] / b[3] for p, b in zip(params, base)])
    return TEMPO_FAST if ratio >= 1.0 else TEMPO_SLOW


def condition_tokens(spec: SequenceSpec) -> tuple[int, int]:
    return (spec.family, tempo_token(spec))


def trajectory(spec: SequenceSpec, num_joints: int = 8) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(spec.F) / spec.fps
    poses = np.zeros((spec.F, num_joints, 3))
    for joint, axis, a, f in family_parameters(spec):
        poses[:, joint, axis] += a * np.sin(2 * np.pi * f * t)
    trans = np.zeros((spec.F, 3))
    drop = ROOT_DROP.get(spec.family_name)
    if drop:
        leg = family_parameters(spec)[0]
        trans[:, 1] = -drop * spec.amplitude * np.sin(2 * np.pi * leg[3] * t) ** 2
    return poses, trans


class Renderer:
    """Caches rest tessellation and palette for one skeleton and camera."""

    def __init__(self, skeleton: Skeleton | None = None, camera: Camera | None = None):
        self.skeleton = skeleton or load_skeleton()
        self.camera = camera or frontal_camera()
        self.palette = build_palette(self.skeleton.num_parts)
        self._parts = rest_part_meshes(self.skeleton)

    def render(self, pose: PoseVector):
        mesh = skin_mesh(self.skeleton, forward_kinematics(self.skeleton, pose), self._parts)
        frag = rasterize(mesh, self.camera)
        motion = rasterize_motion_frame(mesh, self.camera, self.palette, frag)
        rgb = render_shaded_frame(mesh, self.camera, LIGHT_DIR, ALBEDO[: self.skeleton.num_parts], frag)
        return motion, rgb


def generate_sequence(spec: SequenceSpec, renderer: Renderer | None = None, max_retries: int = 3) -> TripletRecord:
    if renderer is None or (renderer.camera.height, renderer.camera.width) != (spec.height, spec.width):
        renderer = Renderer(camera=frontal_camera(spec.height, spec.width))
    attempt_spec = spec
    for _ in range(max_retries + 1):
        poses, trans = trajectory(attempt_spec, renderer.skeleton.num_joints)
        poses32, trans32 = poses.astype(np.float32), trans.astype(np.float32)
        motion = np.zeros((spec.F, spec.height, spec.width, 3), np.float32)
        rgb = np.zeros_like(motion)
        ok = True
        for i in range(spec.F):
            pose = PoseVector(poses32[i].astype(np.float64), trans32[i].astype(np.float64))
            mf, frame = renderer.render(pose)
            if mf.coverage_ratio < 0.01:
                ok = False
                break
            motion[i] = mf.pixels
            rgb[i] = frame
        if ok:
            return TripletRecord(
                spec=attempt_spec,
                poses=poses32,
                root_translation=trans32,
                motion_frames=motion,
                rgb_frames=rgb,
                camera=renderer.camera,
                cond=condition_tokens(attempt_spec),
                palette_parts=renderer.palette.num_parts,
            )
        attempt_spec = SequenceSpec(**{**asdict(attempt_spec), "amplitude": attempt_spec.amplitude * 0.5})
    raise GenerationError(f"sequence {spec} stays under 1% coverage after {max_retries} retries")


def make_dataset(n: int, seed_base: int = 0, F: int = 17, height: int = 64, width: int = 64) -> list[TripletRecord]:
    """``n`` records cycling through the families; record ``i`` uses seed ``seed_base + i``."""
    renderer = Renderer(camera=frontal_camera(height, width))
    return [
        generate_sequence(
            SequenceSpec(family=i % len(FAMILY_NAMES), F=F, seed=seed_base + i, height=height, width=width),
            renderer,
        )
        for i in range(n)
    ]


HELDOUT_SEED_BASE = 1_000_000


def default_splits(n_train: int = 512, n_heldout: int = 64, F: int = 17, size: int = 64):
    return (
        make_dataset(n_train, 0, F, size, size),
        make_dataset(n_heldout, HELDOUT_SEED_BASE, F, size, size),
    )


# --- container -------------------------------------------------------------


def write_dataset(records: list[TripletRecord], path: str | Path, skeleton: Skeleton | None = None) -> None:
    skeleton = skeleton or load_skeleton()
    palette = build_palette(records[0].palette_parts if records else skeleton.num_parts)
    index, blobs, offset = [], [], 0
    for rec in records:
        tensors = {}
        for name in TripletRecord.TENSORS:
            arr = np.ascontiguousarray(getattr(rec, name), dtype="<f4")
            tensors[name] = {"offset": offset, "shape": list(arr.shape)}
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        index.append(
            {
                "spec": asdict(rec.spec),
                "cond": list(rec.cond),
                "camera": rec.camera.to_dict(),
                "palette_parts": rec.palette_parts,
                "tensors": tensors,
            }
        )
    header = {
        "version": VERSION,
        "skeleton": skeleton.to_dict(),
        "palette": {"num_parts": palette.num_parts, "red_list": list(palette.red_list)},
        "records": index,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != MAGIC:
            raise FormatError(f"{path}: not a CMVD container (bad magic)")
        version, hlen = struct.unpack("<IQ", head[4:])
        if version != VERSION:
            raise FormatError(f"{path}: unsupported CMVD version {version}")
        raw = fh.read(hlen)
    if len(raw) != hlen:
        raise TruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    return header, 16 + hlen


def _check_index(header: dict) -> None:
    expected = 0
    for i, rec in enumerate(header["records"]):
        for name in TripletRecord.TENSORS:
            entry = rec["tensors"].get(name)
            if entry is None:
                raise ContainerIndexError(f"record {i}: missing tensor {name!r}")
            if entry["offset"] != expected:
                raise ContainerIndexError(
                    f"record {i}: tensor {name!r} at offset {entry['offset']}, index implies {expected}"
                )
            expected += 4 * int(np.prod(entry["shape"]))
    if expected != header["payload_bytes"]:
        raise ContainerIndexError(f"index covers {expected} bytes, header declares {header['payload_bytes']}")


def read_dataset(path: str | Path) -> list[TripletRecord]:
    header, start = read_header(path)
    _check_index(header)
    size = os.path.getsize(path)
    records = []
    with open(path, "rb") as fh:
        for i, entry in enumerate(header["records"]):
            arrays = {}
            for name in TripletRecord.TENSORS:
                t = entry["tensors"][name]
                nbytes = 4 * int(np.prod(t["shape"]))
                if start + t["offset"] + nbytes > size:
                    raise TruncatedError(f"record {i}: tensor {name!r} truncated ({path})")
                fh.seek(start + t["offset"])
                arrays[name] = np.frombuffer(fh.read(nbytes), dtype="<f4").reshape(t["shape"]).astype(np.float32)
            records.append(
                TripletRecord(
                    spec=SequenceSpec(**entry["spec"]),
                    camera=Camera.from_dict(entry["camera"]),
                    cond=tuple(entry["cond"]),
                    palette_parts=entry["palette_parts"],
                    **arrays,
                )
            )
    return records


def dataset_palette(path: str | Path) -> PartPalette:
    header, _ = read_header(path)
    return build_palette(header["palette"]["num_parts"])


def records_equal(a: TripletRecord, b: TripletRecord) -> bool:
    if a.spec != b.spec or a.cond != b.cond or a.palette_parts != b.palette_parts:
        return False
    if a.camera.to_dict() != b.camera.to_dict():
        return False
    return all(getattr(a, n).tobytes() == getattr(b, n).tobytes() for n in TripletRecord.TENSORS)
