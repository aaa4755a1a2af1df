"""Shared plumbing: seeded RNG streams, canonical hashing, CSV helpers."""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


def rng_from(seed: int, *keys) -> np.random.Generator:
    """Derive an independent, reproducible RNG stream.

    Streams are keyed by the global seed plus any number of integer/string
    keys, so per-sample / per-epoch randomness does not depend on worker
    count or evaluation order.
    """
    material = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            digest = hashlib.sha256(k.encode("utf-8")).digest()
            material.append(int.from_bytes(digest[:4], "little"))
        else:
            material.append(int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(material)))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state
    return rng


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace drift, for stable hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def append_csv_row(path, fieldnames, row: dict) -> None:
    """Append one row, writing the header only when the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        if new:
            writer.writeheader()
        writer.writerow(row)


def write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_summary(path, entries: dict) -> None:
    """Machine-readable key=value summary (one entry per line)."""
    with open(path, "w") as f:
        for key in sorted(entries):
            f.write(f"{key}={entries[key]}\n")


def read_summary(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
