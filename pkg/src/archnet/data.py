"""Labeled image datasets: IDX and CIFAR-10 binary loaders, a desk-scale
synthetic generator, stratified splitting, and the AENC encrypted-tensor
container.

All pixel data is float64 in [0,1] (plain datasets) stored N x C x H x W.
Arrays are frozen after construction; transformations return new objects.

AENC file layout (little-endian):
    magic "AENC" | version u16 | rank u8 | dims rank*u32 |
    data prod(dims)*f32 | labels dims[0]*u16 | crc32 u32 over all prior bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
AENC_MAGIC = b"AENC"
AENC_VERSION = 1


class DataError(ValueError):
    """Malformed dataset content (pixel/label range, count mismatch)."""


class IdxFormatError(DataError):
    """Structurally invalid IDX file."""


class CifarFormatError(DataError):
    """Structurally invalid CIFAR-10 binary file."""


class AencFormatError(DataError):
    """Structurally invalid AENC file."""


class SplitError(DataError):
    """Requested train/val split cannot be satisfied."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass
class Dataset:
    """Plain labeled images; pixels validated to [0,1] on construction."""

    name: str
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    n_train: int | None = None  # split marker: first n_train samples are train

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"label count {self.labels.shape} does not match image count {self.images.shape[0]}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError(
                f"pixels out of range [0,1]: min={self.images.min():.4g} max={self.images.max():.4g}"
            )
        self._check_labels()
        self.images = _freeze(self.images)
        self.labels = _freeze(self.labels)

    def _check_labels(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(
                f"labels out of range [0,{self.num_classes}): "
                f"min={self.labels.min()} max={self.labels.max()}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def _slice(self, lo: int, hi: int, suffix: str):
        return replace(self, name=f"{self.name}:{suffix}", images=self.images[lo:hi], labels=self.labels[lo:hi], n_train=None)

    def train(self):
        if self.n_train is None:
            raise SplitError(f"dataset '{self.name}' has no train/val split")
        return self._slice(0, self.n_train, "train")

    def val(self):
        if self.n_train is None:
            raise SplitError(f"dataset '{self.name}' has no train/val split")
        return self._slice(self.n_train, len(self), "val")


@dataclass
class EncryptedDataset(Dataset):
    """Ciphertext tensors; values are unconstrained floats."""

    encryptor: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"tensors must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"label count {self.labels.shape} does not match tensor count {self.images.shape[0]}"
            )
        self._check_labels()
        self.images = _freeze(self.images)
        self.labels = _freeze(self.labels)


# ---------------------------------------------------------------------------
# IDX (MNIST / Fashion-MNIST)


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Parse a big-endian IDX image/label file pair; pixels are scaled /255."""
    with open(images_path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise IdxFormatError(f"{images_path}: truncated header ({len(raw)} bytes, need 16)")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x} at offset 0 (want 0x{IDX_IMAGES_MAGIC:08x})")
    expected = 16 + n * h * w
    if len(raw) != expected:
        raise IdxFormatError(f"{images_path}: {len(raw)} bytes, header promises {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, h, w)

    with open(labels_path, "rb") as f:
        lraw = f.read()
    if len(lraw) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header ({len(lraw)} bytes, need 8)")
    lmagic, ln = struct.unpack(">II", lraw[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{lmagic:08x} at offset 0 (want 0x{IDX_LABELS_MAGIC:08x})")
    if len(lraw) != 8 + ln:
        raise IdxFormatError(f"{labels_path}: {len(lraw)} bytes, header promises {8 + ln}")
    if ln != n:
        raise IdxFormatError(f"label count {ln} does not match image count {n}")
    labels = np.frombuffer(lraw, dtype=np.uint8, offset=8).astype(np.int64)

    num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(name, pixels.astype(np.float64) / 255.0, labels, num_classes)


def write_idx(data: Dataset, images_path, labels_path) -> None:
    """Inverse of load_idx; pixels are quantized back to bytes via round(x*255)."""
    n, c, h, w = data.images.shape
    if c != 1:
        raise DataError(f"IDX stores single-channel images, got {c} channels")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(np.rint(data.images * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(data.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def load_cifar10(path, name: str = "cifar10") -> Dataset:
    """Parse a CIFAR-10 batch file: records of 1 label byte + 3072 pixel bytes."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % CIFAR_RECORD != 0:
        raise CifarFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    n = len(raw) // CIFAR_RECORD
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise CifarFormatError(f"{path}: record {bad} has label {labels[bad]} > 9")
    images = recs[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(name, images, labels, 10)


def write_cifar10(data: Dataset, path) -> None:
    n, c, h, w = data.images.shape
    if (c, h, w) != (3, 32, 32):
        raise DataError(f"CIFAR-10 records are 3x32x32, got {c}x{h}x{w}")
    recs = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    recs[:, 0] = data.labels.astype(np.uint8)
    recs[:, 1:] = np.rint(data.images * 255.0).astype(np.uint8).reshape(n, 3072)
    with open(path, "wb") as f:
        f.write(recs.tobytes())


# ---------------------------------------------------------------------------
# synthetic desk-scale data


def synth_shapes(n: int, classes: int = 4, size: int = 8, seed: int = 0) -> Dataset:
    """Balanced synthetic image classes: horizontal bar, vertical bar,
    diagonal, centered blob, with per-sample jitter noise (sigma 0.05)."""
    if not 2 <= classes <= 4:
        raise DataError(f"synth_shapes supports 2..4 classes, got {classes}")
    if n < classes:
        raise DataError(f"need at least one sample per class: n={n} < classes={classes}")
    rng = np.random.default_rng(seed)
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]

    images = np.zeros((n, 1, size, size))
    labels = np.empty(n, dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size]
    idx = 0
    for cls, count in enumerate(counts):
        for _ in range(count):
            img = np.zeros((size, size))
            if cls == 0:  # horizontal bar
                row = rng.integers(1, size - 1)
                img[row, :] = 1.0
            elif cls == 1:  # vertical bar
                col = rng.integers(1, size - 1)
                img[:, col] = 1.0
            elif cls == 2:  # diagonal
                img[np.arange(size), np.arange(size)] = 1.0
            else:  # centered blob
                cy = size / 2 - 0.5 + rng.uniform(-0.5, 0.5)
                cx = size / 2 - 0.5 + rng.uniform(-0.5, 0.5)
                img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (size / 6) ** 2))
            img = img + rng.normal(0.0, 0.05, (size, size))
            images[idx, 0] = np.clip(img, 0.0, 1.0)
            labels[idx] = cls
            idx += 1
    return Dataset(f"synth{n}", images, labels, classes)


# ---------------------------------------------------------------------------
# splitting


def split(data: Dataset, ratio: str, seed: int = 0) -> Dataset:
    """Stratified train:val split with a seeded shuffle; returns a dataset
    reordered train-first with the split marker set.

    Per-class val quotas are floor(count*b/(a+b)), topped up by largest
    remainder until the total val size round(n*b/(a+b)) is met. Degenerate
    ratios that leave either side empty raise SplitError.
    """
    parts = ratio.split(":")
    if len(parts) != 2:
        raise SplitError(f"ratio must look like 'a:b', got {ratio!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise SplitError(f"ratio must be two integers, got {ratio!r}") from None
    if a < 1 or b < 1:
        raise SplitError(f"ratio parts must be >= 1, got {a}:{b}")

    n = len(data)
    n_val = round(n * b / (a + b))
    if n_val < 1 or n_val >= n:
        raise SplitError(f"{ratio} split of {n} samples leaves an empty side (val={n_val})")

    rng = np.random.default_rng(seed)
    class_ids = sorted(int(c) for c in np.unique(data.labels))
    per_class = {c: np.flatnonzero(data.labels == c) for c in class_ids}
    quotas = {c: len(per_class[c]) * b / (a + b) for c in class_ids}
    val_counts = {c: int(np.floor(quotas[c])) for c in class_ids}
    short = n_val - sum(val_counts.values())
    by_remainder = sorted(class_ids, key=lambda c: (val_counts[c] - quotas[c], c))
    for c in by_remainder[:short]:
        if val_counts[c] >= len(per_class[c]):
            raise SplitError(f"class {c} has too few samples to yield one val example")
        val_counts[c] += 1

    train_idx, val_idx = [], []
    for c in class_ids:
        order = rng.permutation(per_class[c])
        val_idx.extend(order[: val_counts[c]])
        train_idx.extend(order[val_counts[c] :])
    train_idx = np.array(train_idx, dtype=np.int64)[rng.permutation(len(train_idx))]
    val_idx = np.array(val_idx, dtype=np.int64)[rng.permutation(len(val_idx))]
    order = np.concatenate([train_idx, val_idx])

    return replace(
        data,
        images=data.images[order],
        labels=data.labels[order],
        n_train=len(train_idx),
    )


# ---------------------------------------------------------------------------
# AENC container


def encrypted_to_bytes(data: Dataset) -> bytes:
    """Serialize any (N,C,H,W) sample set to the AENC byte format."""
    dims = data.images.shape
    out = bytearray()
    out += AENC_MAGIC
    out += struct.pack("<H", AENC_VERSION)
    out += struct.pack("<B", len(dims))
    out += struct.pack(f"<{len(dims)}I", *dims)
    out += data.images.astype("<f4").tobytes()
    out += data.labels.astype("<u2").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def encrypted_from_bytes(raw: bytes, name: str = "aenc") -> EncryptedDataset:
    if len(raw) < 4 + 2 + 1 + 4:
        raise AencFormatError(f"AENC blob too short ({len(raw)} bytes)")
    if raw[:4] != AENC_MAGIC:
        raise AencFormatError(f"bad magic {raw[:4]!r} at offset 0 (want {AENC_MAGIC!r})")
    crc_stored = struct.unpack("<I", raw[-4:])[0]
    crc_actual = zlib.crc32(raw[:-4])
    if crc_stored != crc_actual:
        raise AencFormatError(f"CRC mismatch: stored 0x{crc_stored:08x}, computed 0x{crc_actual:08x}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != AENC_VERSION:
        raise AencFormatError(f"unsupported AENC version {version}")
    (rank,) = struct.unpack_from("<B", raw, 6)
    off = 7
    if len(raw) < off + 4 * rank + 4:
        raise AencFormatError(f"truncated dims: rank {rank} needs {4 * rank} bytes at offset {off}")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    if rank != 4:
        raise AencFormatError(f"AENC rank must be 4 (N,C,H,W), got {rank}")
    count = int(np.prod(dims)) if rank else 1
    n = dims[0]
    expected = off + 4 * count + 2 * n + 4
    if len(raw) != expected:
        raise AencFormatError(f"{len(raw)} bytes, header promises {expected}")
    images = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float64)
    off += 4 * count
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 0
    return EncryptedDataset(name, images, labels, num_classes, encryptor="file")


def write_encrypted(data: Dataset, path) -> None:
    with open(path, "wb") as f:
        f.write(encrypted_to_bytes(data))


def read_encrypted(path, name: str | None = None) -> EncryptedDataset:
    with open(path, "rb") as f:
        raw = f.read()
    return encrypted_from_bytes(raw, name or str(path))
