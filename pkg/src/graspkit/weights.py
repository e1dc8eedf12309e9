"""Flat weight archive shared by every model in the package.

Layout: an 8-byte little-endian uint64 giving the manifest length, the JSON
manifest (an ordered list of {name, shape, dtype, byte_offset} entries, offsets
relative to the start of the data section), then the raw little-endian float32
blobs back to back. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

_DTYPE = np.dtype("<f4")


def save_archive(path, arrays) -> None:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype != np.float32:
            raise FormatError(f"array {name!r} must be float32, got {arr.dtype}")
        raw = arr.astype(_DTYPE, copy=False).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "byte_offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps(entries, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_archive(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: too short to be a weight archive")
    (mlen,) = struct.unpack("<Q", data[:8])
    if 8 + mlen > len(data):
        raise FormatError(f"{path}: manifest length {mlen} exceeds file size")
    try:
        entries = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad manifest: {e}") from e
    body = data[8 + mlen :]
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in entries:
        if entry.get("dtype") != "f32":
            raise FormatError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + count * 4
        if end > len(body):
            raise FormatError(f"{path}: array {entry['name']!r} overruns the data section")
        out[entry["name"]] = (
            np.frombuffer(body[start:end], dtype=_DTYPE).reshape(shape).copy()
        )
    return out


def checksum_arrays(arrays) -> str:
    """Order-sensitive sha256 over names, shapes and raw bytes."""
    h = hashlib.sha256()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=_DTYPE)
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def module_arrays(module: torch.nn.Module, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
    """Snapshot a module's parameters (and buffers) as named float32 arrays."""
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype != np.float32:
            raise FormatError(f"parameter {name!r} is {arr.dtype}; only float32 is archived")
        out[prefix + name] = arr.copy()
    return out


def load_into_module(module: torch.nn.Module, arrays, prefix: str = "") -> None:
    """Copy archived arrays into a module; every module parameter must be present."""
    state = {}
    for name, tensor in module.state_dict().items():
        key = prefix + name
        if key not in arrays:
            raise FormatError(f"archive is missing array {key!r}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise FormatError(
                f"array {key!r} has shape {tuple(arr.shape)}, expected {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr))
    module.load_state_dict(state)


def subset(arrays, prefix: str) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict((k, v) for k, v in arrays.items() if k.startswith(prefix))
    if not out:
        raise FormatError(f"archive holds no arrays with prefix {prefix!r}")
    return out
