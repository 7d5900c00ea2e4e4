"""On-disk formats: motion containers, token-map exports, preservation-mask
exports, checkpoints, and loss traces.

All containers are little-endian with a fixed magic string and a version
byte. Floats are 32-bit; bit grids are packed 1 bit per code dimension with
bit value 1 meaning the positive level +1/sqrt(d).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .motion import MotionSequence

MOTION_MAGIC = b"MGMO"
TOKENS_MAGIC = b"MGTK"
MASK_MAGIC = b"MGMK"
CHECKPOINT_MAGIC = b"MGCK"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _expect(f, magic: bytes, what: str):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{what}: bad magic {got!r}")
    ver = f.read(1)[0]
    if ver != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported version {ver}")


# ---------------------------------------------------------------------------
# motion container
# ---------------------------------------------------------------------------


def save_motion(path, motion: MotionSequence) -> None:
    n, j, f_dim = motion.data.shape
    with open(path, "wb") as f:
        f.write(MOTION_MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<4I", n, j, f_dim, motion.true_length))
        f.write(motion.data.astype("<f4").tobytes())


def load_motion(path) -> MotionSequence:
    with open(path, "rb") as f:
        _expect(f, MOTION_MAGIC, "motion file")
        n, j, f_dim, true_length = struct.unpack("<4I", f.read(16))
        raw = f.read(n * j * f_dim * 4)
        if len(raw) != n * j * f_dim * 4:
            raise FormatError("motion file truncated")
        data = np.frombuffer(raw, dtype="<f4").reshape(n, j, f_dim)
    return MotionSequence(data.copy(), true_length)


def motion_to_json(motion: MotionSequence) -> str:
    """Debug mirror of the binary container."""
    n, j, f_dim = motion.data.shape
    doc = {
        "version": FORMAT_VERSION,
        "n_frames": n,
        "n_joints": j,
        "feature_dim": f_dim,
        "true_length": motion.true_length,
        "data": [float(x) for x in motion.data.reshape(-1)],
    }
    return json.dumps(doc)


def motion_from_json(text: str) -> MotionSequence:
    doc = json.loads(text)
    data = np.array(doc["data"], dtype=np.float32).reshape(
        doc["n_frames"], doc["n_joints"], doc["feature_dim"]
    )
    return MotionSequence(data, doc["true_length"])


# ---------------------------------------------------------------------------
# token maps (bit-packed)
# ---------------------------------------------------------------------------


def save_token_maps(path, maps) -> None:
    """``maps`` is a list of TokenMap-like objects with .v/.bits (h, m, d)."""
    with open(path, "wb") as f:
        f.write(TOKENS_MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(maps)))
        for tm in maps:
            h, m, d = tm.bits.shape
            f.write(struct.pack("<4I", tm.v, h, m, d))
            packed = np.packbits((tm.bits > 0).reshape(-1))
            f.write(packed.tobytes())


def load_token_maps(path, level: float):
    """Load bit grids back to +/-``level`` arrays; returns list of (v, bits)."""
    out = []
    with open(path, "rb") as f:
        _expect(f, TOKENS_MAGIC, "token file")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            v, h, m, d = struct.unpack("<4I", f.read(16))
            nbits = h * m * d
            raw = f.read((nbits + 7) // 8)
            flat = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=nbits)
            bits = np.where(flat.reshape(h, m, d) > 0, level, -level).astype(np.float32)
            out.append((v, bits))
    return out


def save_masks(path, masks: list[np.ndarray]) -> None:
    """Per-scale binary grids (h, m) packed one bit per cell."""
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(masks)))
        for v, grid in enumerate(masks):
            h, m = grid.shape
            f.write(struct.pack("<3I", v, h, m))
            f.write(np.packbits(grid.astype(bool).reshape(-1)).tobytes())


def load_masks(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as f:
        _expect(f, MASK_MAGIC, "mask file")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            _v, h, m = struct.unpack("<3I", f.read(12))
            ncell = h * m
            raw = f.read((ncell + 7) // 8)
            flat = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=ncell)
            out.append(flat.reshape(h, m).astype(np.uint8))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_DTYPE_TAGS = {"<f4": "<f4", "<f8": "<f8"}


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Versioned binary of named parameter arrays plus a JSON meta header."""
    names = sorted(params)
    manifest = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name])
        tag = arr.dtype.newbyteorder("<").str
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"unsupported dtype {arr.dtype} for param {name!r}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        blobs.append(arr.astype(tag).tobytes())
    header = json.dumps({"params": manifest, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        _expect(f, CHECKPOINT_MAGIC, "checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            raw = f.read(nbytes)
            if len(raw) != nbytes:
                raise FormatError(f"checkpoint truncated at param {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return params, header["meta"]


# ---------------------------------------------------------------------------
# loss traces
# ---------------------------------------------------------------------------


def save_trace(path, rows: list[tuple], columns: list[str]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path) -> tuple[list[str], list[list[float]]]:
    lines = Path(path).read_text().strip().splitlines()
    cols = lines[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    return cols, rows
