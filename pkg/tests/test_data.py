"""Dataset loaders, writers, splitting, and the AENC container."""

import struct
import zlib

import numpy as np
import pytest

from archnet.data import (
    AencFormatError,
    CifarFormatError,
    DataError,
    Dataset,
    EncryptedDataset,
    IdxFormatError,
    SplitError,
    encrypted_from_bytes,
    encrypted_to_bytes,
    load_cifar10,
    load_idx,
    read_encrypted,
    split,
    synth_shapes,
    write_cifar10,
    write_encrypted,
    write_idx,
)


# -- fixtures built by an independent writer (plain struct, no package code) --


def build_idx_fixture(tmp_path, pixels, labels, prefix=""):
    """pixels: uint8 array (N,H,W); labels: uint8 (N,)."""
    n, h, w = pixels.shape
    img_path = tmp_path / f"{prefix}images.idx3-ubyte"
    lab_path = tmp_path / f"{prefix}labels.idx1-ubyte"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pixels.tobytes())
    lab_path.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return img_path, lab_path


def build_cifar_fixture(tmp_path, pixels, labels):
    """pixels: uint8 (N,3,32,32); labels: uint8 (N,)."""
    out = bytearray()
    for lab, img in zip(labels, pixels):
        out.append(int(lab))
        out += img.tobytes()
    path = tmp_path / "data_batch.bin"
    path.write_bytes(bytes(out))
    return path


class TestIdx:
    def test_fixture_pixels_recovered_exactly(self, tmp_path):
        pixels = np.arange(32, dtype=np.uint8).reshape(2, 4, 4)
        labels = np.array([3, 7], dtype=np.uint8)
        img, lab = build_idx_fixture(tmp_path, pixels, labels)
        ds = load_idx(img, lab)
        assert ds.images.shape == (2, 1, 4, 4)
        np.testing.assert_array_equal(ds.images[:, 0] * 255.0, pixels.astype(np.float64))
        np.testing.assert_array_equal(ds.labels, [3, 7])
        assert ds.num_classes == 8

    def test_wrong_magic_names_offset(self, tmp_path):
        img, lab = build_idx_fixture(tmp_path, np.zeros((1, 2, 2), np.uint8), np.zeros(1, np.uint8))
        raw = bytearray(img.read_bytes())
        raw[0] = 0xFF
        img.write_bytes(bytes(raw))
        with pytest.raises(IdxFormatError, match="bad magic.*offset 0"):
            load_idx(img, lab)

    def test_truncated_image_file(self, tmp_path):
        img, lab = build_idx_fixture(tmp_path, np.zeros((2, 3, 3), np.uint8), np.zeros(2, np.uint8))
        img.write_bytes(img.read_bytes()[:-5])
        with pytest.raises(IdxFormatError, match="promises"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, _ = build_idx_fixture(tmp_path, np.zeros((2, 3, 3), np.uint8), np.zeros(2, np.uint8), "a_")
        _, lab = build_idx_fixture(tmp_path, np.zeros((3, 3, 3), np.uint8), np.zeros(3, np.uint8), "b_")
        with pytest.raises(IdxFormatError, match="label count 3 does not match image count 2"):
            load_idx(img, lab)

    def test_write_then_load_round_trip(self, tmp_path):
        ds = synth_shapes(12, seed=5)
        # snap pixels to the byte grid first so the round trip is exact
        snapped = Dataset(ds.name, np.rint(ds.images * 255) / 255.0, ds.labels, ds.num_classes)
        write_idx(snapped, tmp_path / "i", tmp_path / "l")
        back = load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(back.images, snapped.images)
        np.testing.assert_array_equal(back.labels, snapped.labels)


class TestCifar10:
    def test_fixture_shapes(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, (2, 3, 32, 32), dtype=np.uint8)
        path = build_cifar_fixture(tmp_path, pixels, np.array([1, 9], np.uint8))
        ds = load_cifar10(path)
        assert ds.images.shape == (2, 3, 32, 32)
        np.testing.assert_array_equal(ds.images * 255.0, pixels.astype(np.float64))
        assert ds.num_classes == 10

    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        ds = load_cifar10(path)
        assert len(ds) == 0

    def test_misaligned_length_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 3072)
        with pytest.raises(CifarFormatError, match="multiple of 3073"):
            load_cifar10(path)

    def test_label_over_nine_rejected(self, tmp_path):
        path = build_cifar_fixture(tmp_path, np.zeros((1, 3, 32, 32), np.uint8), np.array([10], np.uint8))
        with pytest.raises(CifarFormatError, match="label 10"):
            load_cifar10(path)

    def test_round_trip_with_writer(self, tmp_path):
        rng = np.random.default_rng(1)
        pixels = rng.integers(0, 256, (3, 3, 32, 32), dtype=np.uint8)
        labels = np.array([0, 5, 9], np.uint8)
        path = build_cifar_fixture(tmp_path, pixels, labels)
        ds = load_cifar10(path)
        write_cifar10(ds, tmp_path / "rewritten.bin")
        assert (tmp_path / "rewritten.bin").read_bytes() == path.read_bytes()


class TestSynthShapes:
    def test_exact_balance(self):
        ds = synth_shapes(400, seed=0)
        counts = np.bincount(ds.labels, minlength=4)
        np.testing.assert_array_equal(counts, [100, 100, 100, 100])

    def test_seed_determinism(self):
        a = synth_shapes(40, seed=9)
        b = synth_shapes(40, seed=9)
        np.testing.assert_array_equal(a.images, b.images)
        c = synth_shapes(40, seed=10)
        assert not np.array_equal(a.images, c.images)

    def test_needs_one_sample_per_class(self):
        with pytest.raises(DataError, match="at least one sample per class"):
            synth_shapes(3, classes=4)

    def test_pixel_range(self):
        ds = synth_shapes(50, seed=2)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_images_frozen(self):
        ds = synth_shapes(8, seed=0)
        with pytest.raises(ValueError):
            ds.images[0, 0, 0, 0] = 0.5


class TestSplit:
    def test_700_at_6_to_1(self):
        ds = synth_shapes(700, classes=4, seed=0)
        out = split(ds, "6:1", seed=0)
        assert out.n_train == 600
        assert len(out.val()) == 100

    def test_600_at_5_to_1(self):
        ds = synth_shapes(600, classes=4, seed=0)
        out = split(ds, "5:1", seed=0)
        assert out.n_train == 500
        assert len(out.val()) == 100

    def test_smallest_stratified_case(self):
        ds = synth_shapes(4, classes=4, seed=0)
        out = split(ds, "1:1", seed=0)
        assert out.n_train == 2
        assert len(out.val()) == 2

    def test_is_a_partition(self):
        ds = synth_shapes(101, classes=4, seed=3)
        out = split(ds, "3:1", seed=3)
        key = lambda imgs: {img.tobytes() for img in imgs}
        all_samples = key(ds.images)
        train_set, val_set = key(out.train().images), key(out.val().images)
        assert train_set | val_set == all_samples
        assert not (train_set & val_set)

    def test_stratified_proportions(self):
        ds = synth_shapes(400, classes=4, seed=1)
        out = split(ds, "4:1", seed=1)
        val_counts = np.bincount(out.val().labels, minlength=4)
        np.testing.assert_array_equal(val_counts, [20, 20, 20, 20])

    def test_bad_ratio_strings(self):
        ds = synth_shapes(20, seed=0)
        for bad in ("6", "a:b", "0:1", "3:0", "1:2:3"):
            with pytest.raises(SplitError):
                split(ds, bad, seed=0)

    def test_degenerate_split_rejected(self):
        ds = synth_shapes(20, seed=0)
        with pytest.raises(SplitError, match="empty side"):
            split(ds, "200:1", seed=0)

    def test_unsplit_access_is_an_error(self):
        ds = synth_shapes(20, seed=0)
        with pytest.raises(SplitError, match="no train/val split"):
            ds.train()

    def test_split_determinism(self):
        ds = synth_shapes(60, seed=4)
        a = split(ds, "2:1", seed=5)
        b = split(ds, "2:1", seed=5)
        np.testing.assert_array_equal(a.images, b.images)


class TestDatasetValidation:
    def test_out_of_range_pixels_rejected(self):
        with pytest.raises(DataError, match="out of range"):
            Dataset("bad", np.full((1, 1, 2, 2), 1.5), np.zeros(1, np.int64), 2)

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(DataError, match="labels out of range"):
            Dataset("bad", np.zeros((2, 1, 2, 2)), np.array([0, 5]), 3)

    def test_count_mismatch_rejected(self):
        with pytest.raises(DataError, match="label count"):
            Dataset("bad", np.zeros((2, 1, 2, 2)), np.zeros(3, np.int64), 2)

    def test_encrypted_values_unconstrained(self):
        ds = EncryptedDataset("enc", np.full((1, 2, 2, 2), -7.5), np.zeros(1, np.int64), 2, encryptor="x")
        assert ds.images.min() == -7.5


class TestAenc:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        ds = EncryptedDataset("e", rng.standard_normal((5, 4, 6, 6)), rng.integers(0, 4, 5), 4, encryptor="t")
        back = encrypted_from_bytes(encrypted_to_bytes(ds))
        np.testing.assert_array_equal(back.images, ds.images.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_file_round_trip(self, tmp_path):
        ds = synth_shapes(6, seed=1)
        write_encrypted(ds, tmp_path / "d.aenc")
        back = read_encrypted(tmp_path / "d.aenc")
        np.testing.assert_allclose(back.images, ds.images, atol=1e-7)

    def test_crc_protects_every_byte(self):
        ds = synth_shapes(4, seed=2)
        raw = encrypted_to_bytes(ds)
        rng = np.random.default_rng(3)
        for _ in range(40):
            pos = int(rng.integers(0, len(raw)))
            bit = int(rng.integers(0, 8))
            mutated = bytearray(raw)
            mutated[pos] ^= 1 << bit
            with pytest.raises(AencFormatError):
                encrypted_from_bytes(bytes(mutated))

    def test_truncation_rejected(self):
        raw = encrypted_to_bytes(synth_shapes(4, seed=2))
        for cut in (0, 3, 10, len(raw) // 2, len(raw) - 1):
            with pytest.raises(AencFormatError):
                encrypted_from_bytes(raw[:cut])

    def test_crc_error_message(self):
        raw = bytearray(encrypted_to_bytes(synth_shapes(4, seed=2)))
        raw[20] ^= 0x10
        with pytest.raises(AencFormatError, match="CRC mismatch"):
            encrypted_from_bytes(bytes(raw))

    def test_trailing_garbage_rejected(self):
        raw = encrypted_to_bytes(synth_shapes(4, seed=2))
        with pytest.raises(AencFormatError):
            encrypted_from_bytes(raw + b"\x00")
