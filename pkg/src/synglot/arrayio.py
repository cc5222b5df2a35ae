"""Checkpoint directory format: manifest.json + one raw array blob.

The manifest maps each array name to {shape, dtype, file, byte_offset};
arrays are stored little-endian, C-order, back to back in the named file.
Loading reproduces every buffer bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_BLOB = "arrays.bin"

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
    "int8": "|i1",
}


def _dtype_name(arr: np.ndarray) -> str:
    name = arr.dtype.name
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name}")
    return name


def save_arrays(directory, arrays: dict[str, np.ndarray]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    offset = 0
    with open(directory / _BLOB, "wb") as blob:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            dtype_name = _dtype_name(arr)
            raw = arr.astype(_DTYPES[dtype_name], copy=False).tobytes()
            blob.write(raw)
            manifest[name] = {
                "shape": list(arr.shape),
                "dtype": dtype_name,
                "file": _BLOB,
                "byte_offset": offset,
            }
            offset += len(raw)
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return directory


def load_arrays(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    blobs = {}
    out = {}
    for name, entry in manifest.items():
        path = directory / entry["file"]
        if path not in blobs:
            blobs[path] = path.read_bytes()
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(
            blobs[path], dtype=dtype, count=count, offset=entry["byte_offset"]
        )
        out[name] = arr.reshape(entry["shape"]).astype(entry["dtype"], copy=True)
    return out
