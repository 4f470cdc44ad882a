"""Self-describing binary container for named tensors plus JSON metadata.

Layout: 8-byte magic, 8-byte little-endian manifest length, UTF-8 JSON
manifest, then raw little-endian tensor payloads at the offsets the
manifest declares. Checkpoints and residual-matrix dumps both use this
format; round-tripping is bit-exact because payloads are the arrays'
raw bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

__all__ = ["FORMAT_VERSION", "save_container", "load_container"]

_MAGIC = b"SDTENSR1"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays and a JSON-serializable meta dict to ``path``."""
    entries = []
    offset = 0
    blobs = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPES:
            raise ParseError(f"save_container: unsupported dtype {dtype_name} for {name!r}")
        blob = arr.astype(_DTYPES[dtype_name], copy=False).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype_name, "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(manifest_bytes).to_bytes(8, "little"))
        f.write(manifest_bytes)
        for blob in blobs:
            f.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back tensors and metadata written by :func:`save_container`."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise ParseError(f"{path}: not a tensor container (bad magic)")
    mlen = int.from_bytes(data[8:16], "little")
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: corrupt manifest ({e})") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    payload = data[16 + mlen :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise ParseError(f"{path}: payload truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(shape)
        tensors[entry["name"]] = arr.astype(entry["dtype"], copy=True)
    return tensors, manifest["meta"]
