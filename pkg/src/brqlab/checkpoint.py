"""Checkpoint files.

Layout: ``b"BRQ1"``, a little-endian uint32 header length, the UTF-8 JSON
header, then float32 little-endian tensors in header order. The header lists
each tensor's name, shape and byte offset from the start of the tensor data.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptFile, UnsupportedFormat

MAGIC = b"BRQ1"


def encode(tensors: dict, meta: dict) -> bytes:
    index, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({**meta, "tensors": index}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def decode(data: bytes) -> tuple[dict, dict]:
    if data[:4] != MAGIC:
        raise UnsupportedFormat("not a BRQ1 checkpoint")
    if len(data) < 8:
        raise CorruptFile("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"bad checkpoint header: {exc}") from exc
    body = data[8 + hlen:]
    tensors = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        end = t["offset"] + 4 * n
        if end > len(body):
            raise CorruptFile(f"tensor {t['name']} runs past end of file")
        tensors[t["name"]] = np.frombuffer(body[t["offset"]:end], dtype="<f4").reshape(t["shape"]).astype(np.float64)
    return header, tensors


def save_checkpoint(path, tensors: dict, meta: dict) -> Path:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".brq")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode(tensors, meta))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode(Path(path).read_bytes())
