"""ATAE checkpoint container: round-trips, meta records, mutant rejection."""

import numpy as np
import pytest

from archnet.checkpoint import (
    AtaeFormatError,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    read_checkpoint,
    write_checkpoint,
)


def random_tensors(rng, count=4):
    out = {}
    for i in range(count):
        rank = int(rng.integers(1, 5))
        dims = tuple(int(d) for d in rng.integers(1, 5, rank))
        out[f"tensor.{i}"] = rng.standard_normal(dims)
    return out


def test_round_trip_preserves_float32_values():
    rng = np.random.default_rng(0)
    tensors = random_tensors(rng)
    back, meta = checkpoint_from_bytes(checkpoint_to_bytes(tensors))
    assert meta is None
    assert set(back) == set(tensors)
    for name in tensors:
        np.testing.assert_array_equal(back[name], tensors[name].astype(np.float32).astype(np.float64))


def test_meta_record_round_trip():
    meta = {"kind": "classifier", "config": {"hidden": 64, "blocks": [[8, True]]}}
    raw = checkpoint_to_bytes({"w": np.ones((2, 2))}, meta)
    back, got_meta = checkpoint_from_bytes(raw)
    assert got_meta == meta
    assert list(back) == ["w"]


def test_serialization_is_deterministic():
    rng = np.random.default_rng(1)
    tensors = random_tensors(rng)
    meta = {"b": 2, "a": 1}
    assert checkpoint_to_bytes(tensors, meta) == checkpoint_to_bytes(dict(reversed(tensors.items())), meta)


def test_reserialization_is_bit_identical():
    # float32 on disk -> float64 in memory -> float32 again is exact
    rng = np.random.default_rng(2)
    raw = checkpoint_to_bytes(random_tensors(rng), {"kind": "x"})
    tensors, meta = checkpoint_from_bytes(raw)
    assert checkpoint_to_bytes(tensors, meta) == raw


def test_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    tensors = random_tensors(rng)
    write_checkpoint(tmp_path / "m.atae", tensors, {"kind": "t"})
    back, meta = read_checkpoint(tmp_path / "m.atae")
    assert meta == {"kind": "t"}
    assert set(back) == set(tensors)


def test_zero_dimension_tensor():
    raw = checkpoint_to_bytes({"empty": np.zeros((0, 3))})
    back, _ = checkpoint_from_bytes(raw)
    assert back["empty"].shape == (0, 3)


def test_bad_magic():
    raw = bytearray(checkpoint_to_bytes({"w": np.ones(2)}))
    raw[0] ^= 0xFF
    with pytest.raises(AtaeFormatError, match="bad magic"):
        checkpoint_from_bytes(bytes(raw))


def test_bad_version():
    raw = bytearray(checkpoint_to_bytes({"w": np.ones(2)}))
    raw[4] = 0xEE
    with pytest.raises(AtaeFormatError, match="version"):
        checkpoint_from_bytes(bytes(raw))


def test_every_truncation_rejected():
    raw = checkpoint_to_bytes({"w": np.ones((2, 2)), "b": np.zeros(3)}, {"kind": "t"})
    for cut in range(len(raw)):
        with pytest.raises(AtaeFormatError):
            checkpoint_from_bytes(raw[:cut])


def test_count_flips_rejected():
    raw = checkpoint_to_bytes({"w": np.ones((2, 2))})
    for bit in range(16):
        mutated = bytearray(raw)
        mutated[6 + bit // 8] ^= 1 << (bit % 8)  # count field (u32 at offset 6)
        with pytest.raises(AtaeFormatError):
            checkpoint_from_bytes(bytes(mutated))


def test_trailing_bytes_rejected():
    raw = checkpoint_to_bytes({"w": np.ones(2)})
    with pytest.raises(AtaeFormatError, match="trailing"):
        checkpoint_from_bytes(raw + b"\x01")


def test_duplicate_name_rejected():
    one = checkpoint_to_bytes({"w": np.ones(1)})
    record = one[10:]  # strip header
    import struct

    forged = one[:4] + struct.pack("<HI", 1, 2) + record + record
    with pytest.raises(AtaeFormatError, match="duplicate"):
        checkpoint_from_bytes(forged)


def test_meta_prefix_collision_rejected():
    with pytest.raises(ValueError, match="meta record prefix"):
        checkpoint_to_bytes({"__meta__evil": np.ones(1)})
