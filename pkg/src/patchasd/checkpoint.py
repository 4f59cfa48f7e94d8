"""Named-tensor checkpoint container.

One serialization format is used repo-wide for model checkpoints, memory
banks, and embedding files. Layout, all little-endian:

    bytes 0..7    magic ``NTCK0001``
    bytes 8..15   uint64: byte length L of the JSON manifest
    bytes 16..16+L manifest, UTF-8 JSON:
                  {"meta": {...},
                   "tensors": [{"name": str, "dtype": "f32"|"f64",
                                "shape": [int, ...], "offset": int,
                                "nbytes": int}, ...]}
    remainder     tensor blobs; ``offset`` is relative to the end of the
                  manifest, values stored little-endian in the declared dtype

Tensors are written in sorted-name order with a deterministic manifest, so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"NTCK0001"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed checkpoint file or tensor mismatch; names the offender."""


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise CheckpointError(f"unsupported dtype {arr.dtype}; use float32 or float64")


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a named-tensor container; tensor order and manifest are canonical."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name]))
        code = _dtype_code(arr)
        blob = arr.astype(_DTYPES[code], copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {"meta": meta or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back as ``(tensors, meta)``; round-trips bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor checkpoint (bad magic)")
    (manifest_len,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + manifest_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[len(MAGIC) + 8: header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise CheckpointError(f"{path}: manifest missing tensor table")

    data = raw[header_end:]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry.get("name", "<unnamed>")
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(d) for d in entry["shape"])
            offset = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad manifest entry for tensor {name!r}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"{path}: tensor {name!r} declares {nbytes} bytes but shape "
                f"{shape} needs {expected}"
            )
        if offset < 0 or offset + nbytes > len(data):
            raise CheckpointError(f"{path}: tensor {name!r} blob out of bounds (truncated file?)")
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape)
        tensors[name] = arr.copy()
    return tensors, manifest.get("meta", {})


def check_shapes(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple]) -> None:
    """Validate a loaded tensor set against an expected name -> shape schema."""
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {', '.join(missing)}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors: {', '.join(extra)}")
    for name, shape in expected.items():
        got = tuple(tensors[name].shape)
        if got != tuple(shape):
            raise CheckpointError(
                f"tensor {name!r} has shape {got}, expected {tuple(shape)}"
            )
