"""Single-file binary container for checkpoints and arrays.

Layout (all integers little-endian):

    bytes 0..7    magic  b"LLIDCNT1"
    bytes 8..11   schema version (uint32)
    bytes 12..19  header length in bytes (uint64)
    header        UTF-8 JSON: {"meta": {...}, "arrays": [{name, dtype,
                  shape, offset, nbytes}, ...]}
    payload       raw little-endian array bytes, concatenated
    trailer       SHA-256 of everything above (32 bytes)

Arrays round-trip bit-exactly; any truncation or corruption fails the
trailing hash check.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import IntegrityError, VersioningError

MAGIC = b"LLIDCNT1"
SCHEMA_VERSION = 1


def _le_dtype(dtype: np.dtype) -> str:
    return np.dtype(dtype).newbyteorder("<").str


def write_container(path, arrays: dict, meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(_le_dtype(arr.dtype), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "dtype": _le_dtype(arr.dtype),
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries},
                        sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", SCHEMA_VERSION, len(header)) + header + bytes(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(body)
        f.write(digest)


def read_container(path) -> tuple:
    """Return (arrays dict, meta dict); raises IntegrityError/VersioningError."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 12 + 32:
        raise IntegrityError(f"{path}: truncated container")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: content hash mismatch (corrupt or truncated)")
    if body[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes")
    version, header_len = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != SCHEMA_VERSION:
        raise VersioningError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    header_start = len(MAGIC) + 12
    header = json.loads(body[header_start : header_start + header_len].decode("utf-8"))
    payload = body[header_start + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return arrays, header["meta"]
