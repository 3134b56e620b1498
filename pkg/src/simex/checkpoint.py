"""Versioned binary checkpoints.

Byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"SMXC"
    4       2     format version (currently 1)
    6       4     CRC32 of every byte from offset 14 to end of file
    10      4     metadata length M
    14      M     metadata, UTF-8 JSON (architecture, precision, model meta,
                  and a table of parameter shapes)
    14+M    ...   raw parameter payload: each array in layer order, C-order,
                  little-endian, dtype given by ``precision``

Files are written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .models import Network, model_from_architecture

MAGIC = b"SMXC"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class CheckpointError(ValueError):
    pass


def _precision(model: Network) -> str:
    return {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64"}[model.dtype]


def to_bytes(model: Network) -> bytes:
    precision = _precision(model)
    dt = np.dtype(precision).newbyteorder("<")
    meta = {
        "architecture": model.architecture(),
        "precision": precision,
        "meta": model.meta,
        "params": [list(p.shape) for p in model.params],
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p, dtype=dt).tobytes() for p in model.params)
    body = meta_bytes + payload
    return _HEADER.pack(MAGIC, VERSION, zlib.crc32(body), len(meta_bytes)) + body


def from_bytes(blob: bytes) -> Network:
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated checkpoint: header incomplete")
    magic, version, crc, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"not a simex checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    body = blob[_HEADER.size:]
    if len(body) < meta_len:
        raise CheckpointError("truncated checkpoint: metadata incomplete")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    meta = json.loads(body[:meta_len].decode("utf-8"))
    model = model_from_architecture(meta["architecture"], meta["precision"])
    dt = np.dtype(meta["precision"]).newbyteorder("<")
    offset = meta_len
    params = model.params
    if [list(p.shape) for p in params] != meta["params"]:
        raise CheckpointError("parameter table does not match architecture")
    for p in params:
        nbytes = p.size * dt.itemsize
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError("truncated checkpoint: parameter payload incomplete")
        p[...] = np.frombuffer(chunk, dtype=dt).reshape(p.shape)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after parameter payload")
    model.meta = meta["meta"]
    return model


def save_checkpoint(model: Network, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = to_bytes(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Network:
    return from_bytes(Path(path).read_bytes())
