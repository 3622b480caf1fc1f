"""OVTF binary tensor files and checkpoint directories.

Layout: magic ``OVTF``, version byte (1), dtype byte (1 = f32 LE, 2 = f64 LE),
rank byte, ``rank`` little-endian u64 extents, then the row-major payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContractError

MAGIC = b"OVTF"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    code = _CODES[arr.dtype]
    if arr.ndim > 255:
        raise ContractError("OVTF supports rank <= 255")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ContractError("not an OVTF payload (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise ContractError(f"unsupported OVTF version {version}")
    if code not in _DTYPES:
        raise ContractError(f"unknown OVTF dtype code {code}")
    shape = struct.unpack_from(f"<{rank}Q", buf, 7)
    offset = 7 + 8 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(buf) != expected:
        raise ContractError(f"OVTF payload size {len(buf)} != expected {expected}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


MANIFEST = "manifest.json"


def save_checkpoint(directory, tensors: Mapping[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write one OVTF file per tensor plus a manifest of name -> file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(tensors):
        fname = f"{name}.ovtf"
        save(directory / fname, tensors[name])
        files[name] = fname
    manifest = {"format": "ovtf-checkpoint", "version": VERSION, "tensors": files}
    if extra:
        manifest.update(extra)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    tensors = {name: load(directory / fname) for name, fname in manifest["tensors"].items()}
    return tensors, manifest
