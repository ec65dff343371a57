"""Parameter snapshot container.

Layout (all integers little-endian)::

    magic       8 bytes   b"MALVSNAP"
    version     uint32    currently 1
    meta_len    uint32    length of the metadata block in bytes
    meta        meta_len  UTF-8 text, ``key = value`` lines (architecture spec)
    count       uint32    number of tensors
    count times:
        name_len    uint16
        name        name_len bytes, UTF-8
        ndim        uint8
        dims        ndim x uint32
        payload     prod(dims) x float64 (IEEE-754, little-endian, row-major)

Tensors appear in model parameter order. Nothing time- or host-dependent is
stored, so equal parameters give byte-identical files.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import IoFailure

MAGIC = b"MALVSNAP"
VERSION = 1


def encode_snapshot(meta: str, tensors) -> bytes:
    meta_b = meta.encode("utf-8")
    items = list(tensors.items() if hasattr(tensors, "items") else tensors)
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(items))]
    for name, arr in items:
        a = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def decode_snapshot(blob: bytes):
    """Return (meta text, dict of name -> float64 array)."""
    if blob[:8] != MAGIC:
        raise IoFailure("not a malvis snapshot (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", blob, 8)
        if version != VERSION:
            raise IoFailure(f"unsupported snapshot version {version}")
        pos = 16
        meta = blob[pos : pos + meta_len].decode("utf-8")
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) * 8
            if pos + size > len(blob):
                raise IoFailure(f"snapshot truncated inside tensor {name!r}")
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).reshape(dims).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise IoFailure(f"snapshot truncated: {exc}") from exc
    return meta, tensors


def save_snapshot(path, meta: str, tensors) -> int:
    blob = encode_snapshot(meta, tensors)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(blob)


def load_snapshot(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return decode_snapshot(blob)
