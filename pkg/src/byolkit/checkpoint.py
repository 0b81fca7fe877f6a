"""Deterministic binary checkpoint container.

Layout: magic 'BKC1' | u64 header length | header JSON (sorted keys) |
raw tensor bytes back to back | u32 crc32 of everything before it.
Identical state serializes to identical bytes (no timestamps), so
save -> load -> save is byte-idempotent.
"""

import json
import os
import zlib

import numpy as np

MAGIC = b"BKC1"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, meta, tensors):
    """meta: JSON-able dict; tensors: dict name -> ndarray."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        raw = arr.tobytes()
        entries.append({
            "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
            "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": VERSION, "meta": meta, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + len(header).to_bytes(8, "little") + header + b"".join(blobs)
    crc = zlib.crc32(body).to_bytes(4, "little")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(body + crc)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Returns (meta, tensors). Raises CheckpointError on any corruption."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    body, crc = raw[:-4], raw[-4:]
    if zlib.crc32(body).to_bytes(4, "little") != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt container)")
    hlen = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if header["version"] != VERSION:
        raise CheckpointError(
            f"{path}: container version {header['version']} != supported {VERSION}"
        )
    base = 12 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        buf = raw[start : start + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = arr.copy()
    return header["meta"], tensors
