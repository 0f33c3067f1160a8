"""Portable model checkpoints: the "ATAE" named-tensor container.

Layout (little-endian):
    magic "ATAE" | version u16 | record count u32 | records...
    record: name_len u16 | name utf-8 | rank u8 | dims rank*u32 |
            prod(dims) * f32

Weights are stored float32; in-memory tensors are float64, so save->load
loses the low mantissa bits once, after which the bytes are stable
(float32 -> float64 -> float32 is exact).

A model's architecture rides along as a zero-length record whose name is
"__meta__" plus a canonical JSON document. Readers that only want tensors
can ignore it.
"""

from __future__ import annotations

import json
import struct

import numpy as np

ATAE_MAGIC = b"ATAE"
ATAE_VERSION = 1
META_PREFIX = "__meta__"


class AtaeFormatError(ValueError):
    """Structurally invalid ATAE checkpoint."""


def checkpoint_to_bytes(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    """Serialize named tensors (sorted by name, meta record first)."""
    records = []
    if meta is not None:
        meta_name = META_PREFIX + json.dumps(meta, sort_keys=True, separators=(",", ":"))
        records.append((meta_name, np.zeros((0,), dtype=np.float64)))
    for name in sorted(tensors):
        if name.startswith(META_PREFIX):
            raise ValueError(f"tensor name {name!r} collides with the meta record prefix")
        records.append((name, np.asarray(tensors[name], dtype=np.float64)))

    out = bytearray()
    out += ATAE_MAGIC
    out += struct.pack("<HI", ATAE_VERSION, len(records))
    for name, arr in records:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long ({len(nb)} bytes)")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    return bytes(out)


def checkpoint_from_bytes(raw: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    """Parse an ATAE blob into (tensors as float64, meta dict or None)."""
    if len(raw) < 10:
        raise AtaeFormatError(f"checkpoint too short ({len(raw)} bytes, need 10-byte header)")
    if raw[:4] != ATAE_MAGIC:
        raise AtaeFormatError(f"bad magic {raw[:4]!r} at offset 0 (want {ATAE_MAGIC!r})")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != ATAE_VERSION:
        raise AtaeFormatError(f"unsupported checkpoint version {version}")

    tensors: dict[str, np.ndarray] = {}
    meta: dict | None = None
    off = 10
    for i in range(count):
        if len(raw) < off + 2:
            raise AtaeFormatError(f"record {i}: truncated at offset {off} (name length)")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        if len(raw) < off + name_len:
            raise AtaeFormatError(f"record {i}: truncated at offset {off} (name)")
        try:
            name = raw[off : off + name_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise AtaeFormatError(f"record {i}: name is not valid UTF-8 ({e})") from None
        off += name_len
        if len(raw) < off + 1:
            raise AtaeFormatError(f"record {i} ({name!r}): truncated at offset {off} (rank)")
        rank = raw[off]
        off += 1
        if len(raw) < off + 4 * rank:
            raise AtaeFormatError(f"record {i} ({name!r}): truncated at offset {off} (dims)")
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n_elem = 1
        for d in dims:
            n_elem *= d
        if len(raw) < off + 4 * n_elem:
            raise AtaeFormatError(f"record {i} ({name!r}): truncated at offset {off} (data)")
        arr = np.frombuffer(raw, dtype="<f4", count=n_elem, offset=off).reshape(dims).astype(np.float64)
        off += 4 * n_elem

        if name.startswith(META_PREFIX):
            if meta is not None:
                raise AtaeFormatError(f"record {i}: duplicate meta record")
            try:
                meta = json.loads(name[len(META_PREFIX) :])
            except json.JSONDecodeError as e:
                raise AtaeFormatError(f"record {i}: meta record is not valid JSON ({e})") from None
        else:
            if name in tensors:
                raise AtaeFormatError(f"record {i}: duplicate tensor name {name!r}")
            tensors[name] = arr
    if off != len(raw):
        raise AtaeFormatError(f"{len(raw) - off} trailing bytes after the last record")
    return tensors, meta


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_to_bytes(tensors, meta))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
