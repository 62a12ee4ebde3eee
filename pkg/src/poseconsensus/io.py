"""File formats.

* Poses: comma-separated text, one sample per line, joint-major coordinates,
  17 significant digits. An optional ``# dims=<d> joints=<n>`` header line
  tells readers how to reshape.
* Skeleton, GroupSet, configs, reports: JSON documents.
* Heatmaps: 16-byte little-endian header ``(magic, n, l_x, l_y)`` as int32,
  followed by any number of stacks of ``n`` row-major ``l_y x l_x`` float32 maps.
* Tensors (network parameters): 16-byte header ``(magic, version, count, 0)``
  then per tensor ``name_len, name, dtype_code, ndim, dims..., data``; all
  integers int32 LE, data float32 (code 0) or float64 (code 1) LE, C order.
"""

from __future__ import annotations

import json
import os
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .core import GroupSet, Skeleton

HEATMAP_MAGIC = 0x50414D48  # b"HMAP" read as little-endian int32
TENSOR_MAGIC = 0x524E5354  # b"TSNR"
TENSOR_VERSION = 1


class FormatError(ValueError):
    pass


@contextmanager
def atomic_path(path):
    """Yield a ``<path>.partial`` to write to; renamed onto ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    yield tmp
    os.replace(tmp, path)


def write_poses(path, poses) -> None:
    poses = np.asarray(poses, dtype=float)
    if poses.ndim == 2:
        poses = poses[None]
    N, n, d = poses.shape
    with atomic_path(path) as tmp, open(tmp, "w") as fh:
        fh.write(f"# dims={d} joints={n}\n")
        for row in poses.reshape(N, n * d):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_poses(path, dims: int | None = None) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("#") and "dims=" in first:
        meta = dict(tok.split("=") for tok in first[1:].split())
        dims = int(meta["dims"])
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if dims is None:
        raise FormatError(f"{path}: no dims header; pass dims explicitly")
    if data.shape[1] % dims:
        raise FormatError(f"{path}: {data.shape[1]} columns is not a multiple of dims={dims}")
    return data.reshape(data.shape[0], -1, dims)


def write_json(path, obj) -> None:
    with atomic_path(path) as tmp, open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_skeleton(path, skeleton: Skeleton) -> None:
    write_json(path, skeleton.to_dict())


def read_skeleton(path) -> Skeleton:
    return Skeleton.from_dict(read_json(path))


def write_groups(path, groups: GroupSet) -> None:
    write_json(path, groups.to_dict())


def read_groups(path) -> GroupSet:
    return GroupSet.from_dict(read_json(path))


def write_heatmaps(path, stacks) -> None:
    H = np.asarray(stacks, dtype="<f4")
    if H.ndim == 3:
        H = H[None]
    _, n, l_y, l_x = H.shape
    with atomic_path(path) as tmp, open(tmp, "wb") as fh:
        fh.write(struct.pack("<4i", HEATMAP_MAGIC, n, l_x, l_y))
        fh.write(np.ascontiguousarray(H).tobytes())


def read_heatmaps(path) -> np.ndarray:
    """Returns ``(K, n, l_y, l_x)`` float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    magic, n, l_x, l_y = struct.unpack("<4i", raw[:16])
    if magic != HEATMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic:#x}")
    per = n * l_x * l_y * 4
    body = len(raw) - 16
    if per == 0 or body % per:
        raise FormatError(f"{path}: payload of {body} bytes is not a whole number of stacks")
    return np.frombuffer(raw, dtype="<f4", offset=16).astype(float).reshape(-1, n, l_y, l_x)


def write_tensors(path, tensors: dict) -> None:
    with atomic_path(path) as tmp, open(tmp, "wb") as fh:
        fh.write(struct.pack("<4i", TENSOR_MAGIC, TENSOR_VERSION, len(tensors), 0))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            code, dt = (0, "<f4") if arr.dtype == np.float32 else (1, "<f8")
            b = name.encode("utf-8")
            fh.write(struct.pack("<i", len(b)) + b)
            fh.write(struct.pack(f"<2i{arr.ndim}i", code, arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensors(path) -> dict:
    raw = Path(path).read_bytes()
    try:
        return _parse_tensors(raw)
    except (struct.error, KeyError, ValueError) as e:
        if isinstance(e, FormatError):
            raise FormatError(f"{path}: {e}") from None
        raise FormatError(f"{path}: malformed tensor file ({e})") from e


def _parse_tensors(raw: bytes) -> dict:
    magic, version, count, _ = struct.unpack_from("<4i", raw, 0)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic:#x}")
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<i", raw, off)
        off += 4
        name = raw[off:off + ln].decode("utf-8")
        off += ln
        code, ndim = struct.unpack_from("<2i", raw, off)
        off += 8
        shape = struct.unpack_from(f"<{ndim}i", raw, off)
        off += 4 * ndim
        dt = {0: "<f4", 1: "<f8"}[code]
        size = int(np.prod(shape)) * np.dtype(dt).itemsize
        if off + size > len(raw):
            raise FormatError(f"tensor {name!r} is truncated")
        out[name] = np.frombuffer(raw[off:off + size], dtype=dt).reshape(shape).astype(float)
        off += size
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes")
    return out
