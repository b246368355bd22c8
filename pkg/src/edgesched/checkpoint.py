"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    bytes 0-5    magic b"ESCKPT"
    bytes 6-7    uint16 format version
    bytes 8-11   uint32 header length H
    next H bytes UTF-8 JSON header: {"model_config", "meta", "tensors": [
                   {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder    concatenated tensor payloads, little-endian, C order;
                 ``offset`` is relative to the start of the payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"ESCKPT"
VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


def dump(model_config: Mapping[str, Any], tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        key = arr.dtype.name
        if key not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=np.dtype(_DTYPES[key])).tobytes()
        entries.append({"name": name, "dtype": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"model_config": dict(model_config), "meta": dict(meta or {}), "tensors": entries},
                        sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(blobs)


def parse(data: bytes) -> tuple[dict, dict[str, np.ndarray], dict]:
    if data[:6] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<HI", data[6:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    payload = memoryview(data)[12 + hlen:]
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"truncated payload for tensor {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=np.dtype(_DTYPES[e["dtype"]]))
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return header["model_config"], tensors, header["meta"]


def write(path: str | Path, model_config, tensors, meta=None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dump(model_config, tensors, meta))
    tmp.replace(path)


def read(path: str | Path):
    return parse(Path(path).read_bytes())
