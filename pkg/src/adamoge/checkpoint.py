"""Versioned binary checkpoints: bit-exact parameter round-trips.

Layout (all integers little-endian):

    8 bytes   magic "ADAMOGE1"
    u32       fingerprint length, then that many UTF-8 bytes
    u32       entry count
    per entry:
        u32   name length, then UTF-8 name
        u32   rank, then rank * u64 dims
        dims-product * f8 little-endian values (row-major)
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import ParameterStore

MAGIC = b"ADAMOGE1"


class CheckpointError(ValueError):
    pass


def save(path: str, store: ParameterStore, fingerprint: str) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fp = fingerprint.encode("utf-8")
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        params = list(store)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load(path: str) -> tuple[str, dict[str, np.ndarray]]:
    """Returns (fingerprint, ordered name -> float64 array)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an adamoge checkpoint")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, blob, off)
        off += size
        return out

    (fp_len,) = take("<I")
    fingerprint = blob[off : off + fp_len].decode("utf-8")
    off += fp_len
    (count,) = take("<I")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).copy()
        off += size * 8
        entries[name] = arr.reshape(shape)
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    return fingerprint, entries


def load_into(path: str, store: ParameterStore, expected_fingerprint: str | None,
              allow_mismatch: bool = False) -> str:
    """Load a checkpoint into an existing store, verifying the fingerprint."""
    fingerprint, entries = load(path)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        if not allow_mismatch:
            raise CheckpointError(
                f"checkpoint fingerprint {fingerprint[:12]}... does not match the "
                f"configuration ({expected_fingerprint[:12]}...); pass "
                f"--allow-fingerprint-mismatch to override"
            )
    missing = [n for n in store.names() if n not in entries]
    extra = [n for n in entries if n not in store]
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not match the model: missing {missing}, unexpected {extra}"
        )
    store.load_state_dict(entries)
    return fingerprint
