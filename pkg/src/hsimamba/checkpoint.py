"""Flat archive of named arrays with a JSON header.

Layout (all integers little-endian)::

    b"HSIMCKPT"  u32 version  u64 header_len  header (UTF-8 JSON)  payload

The header carries caller metadata under ``"meta"`` and an ``"arrays"`` list
of ``{name, dtype, shape, offset, nbytes}`` entries indexing into the payload.
Arrays are stored as raw little-endian bytes, so a round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSIMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = 20 + hlen
    if len(buf) < start:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(buf[20:start].decode())
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        if lo + e["nbytes"] > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=lo).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, header["meta"]
