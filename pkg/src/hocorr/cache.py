"""Resumable ensemble cache.

File layout (all integers little-endian)::

    b"HOCS"                    magic
    uint32                     format version
    uint64                     metadata length n
    n bytes                    UTF-8 JSON metadata
    float64[...]               accumulator payload

The metadata holds the canonical result-determining config, the accumulator
geometry (chunk size, batch size, chunk range, sample count) and the batch
indices. The payload is every head chunk and then every batch, each as the
plan's sum arrays in declared target order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from hocorr.config import RunConfig, from_document, result_signature
from hocorr.correlator import MomentAccumulator, _Batch

MAGIC = b"HOCS"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CacheError(Exception):
    """Unreadable or incompatible cache file; ``offset`` is the failing byte offset if known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class CacheMismatchError(CacheError):
    """The cache was written for a different configuration."""


@dataclass
class EnsembleCache:
    version: int
    metadata: dict
    accumulator: MomentAccumulator

    @property
    def completed_chunks(self) -> int:
        return self.accumulator.chunk_end


def save_cache(acc: MomentAccumulator, config: RunConfig, path) -> None:
    """Write ``acc`` atomically (temp file + rename)."""
    if acc.pending_samples:
        raise CacheError("cache must be saved on a completed chunk boundary")
    meta = {
        "config": json.loads(result_signature(config)),
        "chunk_size": acc.chunk_size,
        "batch_chunks": acc.batch_chunks,
        "chunk_start": acc.chunk_start,
        "chunk_end": acc.chunk_end,
        "sample_count": acc.sample_count,
        "head_chunks": len(acc.head),
        "batch_indices": [b.index for b in acc.batches],
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blocks = [*acc.head, *(b.sums for b in acc.batches)]
    payload = b"".join(np.ascontiguousarray(s, dtype="<f8").tobytes() for block in blocks for s in block)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_cache(path, config: RunConfig | None = None) -> EnsembleCache:
    """Read a cache; with ``config`` given, refuse one written for different settings."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CacheError(f"truncated header: {len(data)} of {_HEADER.size} bytes", offset=len(data))
    magic, version, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CacheError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise CacheError(f"unsupported cache version {version}, expected {VERSION}", offset=4)
    start = _HEADER.size
    if len(data) < start + n:
        raise CacheError(f"truncated metadata: need {n} bytes, have {len(data) - start}", offset=len(data))
    try:
        meta = json.loads(data[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheError(f"unreadable metadata: {exc}", offset=start) from None
    if config is not None:
        expected = json.loads(result_signature(config))
        if meta.get("config") != expected:
            keys = sorted(k for k in expected if meta.get("config", {}).get(k) != expected[k])
            raise CacheMismatchError(f"cache was written for a different config (differs in: {', '.join(keys)})")
        plan = config.plan
    else:
        plan = from_document(meta["config"]).plan
    shapes = plan.sums_shapes()
    block_len = sum(int(np.prod(s)) for s in shapes)
    blocks = meta["head_chunks"] + len(meta["batch_indices"])
    offset = start + n
    need = blocks * block_len * 8
    have = len(data) - offset
    if have != need:
        kind = "truncated" if have < need else "oversized"
        raise CacheError(f"{kind} payload: expected {need} bytes, found {have}", offset=offset + min(have, need))
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    acc = MomentAccumulator(plan, meta["chunk_size"], meta["batch_chunks"], meta["chunk_start"])
    pos = 0
    decoded = []
    for _ in range(blocks):
        block = []
        for sh in shapes:
            size = int(np.prod(sh))
            block.append(values[pos : pos + size].reshape(sh).copy())
            pos += size
        decoded.append(block)
    acc.head = decoded[: meta["head_chunks"]]
    acc.batches = [_Batch(i, b) for i, b in zip(meta["batch_indices"], decoded[meta["head_chunks"] :])]
    acc.chunk_end = meta["chunk_end"]
    acc.sample_count = meta["sample_count"]
    return EnsembleCache(version, meta, acc)
