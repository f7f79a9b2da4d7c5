"""Binary checkpoint format.

Layout: ``b"MCKP"``, u32 schema version, u64 header length, UTF-8 JSON header
(``{"version", "params": [{"name", "shape", "offset"}], "meta"}``), then the raw
little-endian f64 payload in manifest order. Writes are atomic.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps(
        {"version": VERSION, "params": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[16 + hlen :]
    out = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * n
        if end > len(payload):
            raise CheckpointError(f"truncated payload for {e['name']}")
        out[e["name"]] = np.frombuffer(payload[e["offset"] : end], dtype="<f8").astype(np.float64).reshape(e["shape"])
    return out, header.get("meta", {})


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    blob = encode_checkpoint(arrays, meta)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())
