"""Stream-cipher baseline: RC4 over quantized image bytes, plus an
additive-noise baseline for context.

RC4 here is a trainability baseline, not an endorsement of the cipher.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset


class Rc4KeyError(ValueError):
    """Invalid RC4 key material."""


@dataclass
class Rc4State:
    S: list[int] = field(default_factory=lambda: list(range(256)))
    i: int = 0
    j: int = 0


def rc4_init(key: bytes) -> Rc4State:
    """Key-scheduling algorithm; key must be 1..256 bytes."""
    if not isinstance(key, (bytes, bytearray)):
        raise Rc4KeyError(f"key must be bytes, got {type(key).__name__}")
    if not 1 <= len(key) <= 256:
        raise Rc4KeyError(f"key must be 1..256 bytes, got {len(key)}")
    S = list(range(256))
    j = 0
    for i in range(256):
        j = (j + S[i] + key[i % len(key)]) & 0xFF
        S[i], S[j] = S[j], S[i]
    return Rc4State(S=S)


def rc4_keystream(state: Rc4State, n: int) -> bytes:
    """Advance the PRGA by n steps and return the keystream bytes."""
    S, i, j = state.S, state.i, state.j
    out = bytearray(n)
    for k in range(n):
        i = (i + 1) & 0xFF
        j = (j + S[i]) & 0xFF
        S[i], S[j] = S[j], S[i]
        out[k] = S[(S[i] + S[j]) & 0xFF]
    state.i, state.j = i, j
    return bytes(out)


def rc4_apply(state: Rc4State, data: bytes) -> bytes:
    """XOR data with the keystream; encryption and decryption are the same op."""
    ks = rc4_keystream(state, len(data))
    return bytes(a ^ b for a, b in zip(data, ks))


def rc4_encrypt_dataset(data: Dataset, key: bytes) -> Dataset:
    """Quantize pixels to bytes (round(x*255)), XOR one continuous keystream
    over all samples in index order, and dequantize. Shape and labels are
    preserved; applying the same key twice restores the original up to the
    1/255 quantization grid."""
    state = rc4_init(key)
    quantized = np.rint(data.images * 255.0).astype(np.uint8)
    ks = np.frombuffer(rc4_keystream(state, quantized.size), dtype=np.uint8).reshape(quantized.shape)
    scrambled = (quantized ^ ks).astype(np.float64) / 255.0
    return replace(data, name=f"{data.name}:rc4", images=scrambled, labels=data.labels.copy())


def noise_baseline(data: Dataset, sigma: float, seed: int = 0) -> Dataset:
    """Additive seeded Gaussian noise, clamped to [0,1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noisy = np.clip(data.images + rng.normal(0.0, sigma, data.images.shape), 0.0, 1.0)
    return replace(data, name=f"{data.name}:noise", images=noisy, labels=data.labels.copy())
