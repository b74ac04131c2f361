"""Raw tensor blobs with manifest-side integrity checks.

Tensors cross the process boundary as little-endian float32, one flat blob
per file.  Shapes and SHA-256 content checksums live in the accompanying
manifest document, never in the blob itself.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import DataError

DTYPE = np.dtype("<f4")


def tensor_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=DTYPE).tobytes()


def checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_tensor(path: Path, arr: np.ndarray) -> dict:
    """Write a tensor blob; returns its manifest entry (shape, checksum)."""
    data = tensor_bytes(arr)
    path.write_bytes(data)
    return {
        "file": path.name,
        "shape": list(arr.shape),
        "dtype": "float32",
        "sha256": checksum(data),
    }


def read_tensor(directory: Path, entry: dict) -> np.ndarray:
    """Read and verify a tensor blob declared by a manifest entry.

    Raises DataError on checksum mismatch or when the byte count disagrees
    with the declared shape, so truncation can never be misread as data.
    """
    if entry.get("dtype", "float32") != "float32":
        raise DataError(f"unsupported tensor dtype {entry.get('dtype')!r}")
    path = directory / entry["file"]
    if not path.exists():
        raise DataError(f"missing tensor blob {path.name}")
    data = path.read_bytes()
    if checksum(data) != entry["sha256"]:
        raise DataError(f"checksum mismatch for {path.name}")
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape)) * DTYPE.itemsize if shape else DTYPE.itemsize
    if len(data) != expected:
        raise DataError(
            f"{path.name}: {len(data)} bytes on disk, expected {expected}")
    return np.frombuffer(data, dtype=DTYPE).reshape(shape)
