"""Binary checkpoint container.

Layout: magic ``PGCN``, u16 format version, u32 header length, UTF-8 JSON
header, then little-endian float32 tensor data in header order. The header
carries a ``tensors`` table (name, shape, byte offset into the data block)
plus arbitrary JSON metadata under ``meta``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from scdgcn.errors import CheckpointError

MAGIC = b"PGCN"
FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    table = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        data = np.ascontiguousarray(value, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(np.shape(value)), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"tensors": table, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, tensors)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    if len(raw) < 10:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    data = raw[10 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return header["meta"], tensors
