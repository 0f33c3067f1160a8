"""Trainability metrics for encryptors.

The EC value of an encryptor is the relative validation-accuracy drop it
causes at equal training epochs: (AO - AE) / AO, where AO is accuracy on the
original dataset and AE on the encrypted one. Near 0 means the ciphertext is
as learnable as the plaintext; near 1 means the encryptor destroyed the
pattern.

Percentages are reported truncated (not rounded) to two decimals; that is the
convention the reference result table uses, and it is what makes reported
values reproducible digit for digit from the stored fractions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image

from .arch import TrainedArchNet, encrypt_dataset
from .classifier import ClassifierConfig, config_for, evaluate_accuracy, train_classifier
from .data import Dataset
from .rc4 import noise_baseline, rc4_encrypt_dataset


class UndefinedMetricError(ValueError):
    """EC is undefined (zero baseline accuracy)."""


class UndefinedCorrelationError(ValueError):
    """Pearson correlation is undefined (constant input)."""


def ec_value(ao: float, ae: float) -> float:
    """Relative accuracy drop (AO - AE) / AO as a signed fraction."""
    if ao == 0:
        raise UndefinedMetricError("EC is undefined when the original-data accuracy is 0")
    if not 0 < ao <= 1:
        raise ValueError(f"ao must be in (0,1], got {ao}")
    if not 0 <= ae <= 1:
        raise ValueError(f"ae must be in [0,1], got {ae}")
    return (ao - ae) / ao


def format_percent(fraction: float, decimals: int = 2) -> str:
    """Percentage string truncated toward zero, e.g. -0.0223545 -> '-2.23%'.

    Scaled values are rounded at 1e-6 of a percent first so that binary
    representation noise (0.0224*100 == 2.2399999...) cannot flip the
    truncation.
    """
    scale = 10**decimals
    value = math.trunc(round(fraction * 100 * scale, 6)) / scale
    return f"{value:.{decimals}f}%"


@dataclass
class EcReport:
    dataset: str
    encryptor: str
    epochs: int
    ao: float
    ae: float
    ec: float
    classifier_digest: str
    seeds: dict[str, int]
    ao_curve: list[float] = field(default_factory=list)
    ae_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "encryptor": self.encryptor,
            "epochs": self.epochs,
            "ao": self.ao,
            "ae": self.ae,
            "ec": self.ec,
            "ec_percent": format_percent(self.ec),
            "classifier_digest": self.classifier_digest,
            "seeds": self.seeds,
            "ao_curve": self.ao_curve,
            "ae_curve": self.ae_curve,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    TSV_HEADER = "dataset\tencryptor\tepochs\tao\tae\tec\tec_percent\tclassifier_digest\tseeds"

    def to_tsv_line(self) -> str:
        seeds = ",".join(f"{k}={v}" for k, v in sorted(self.seeds.items()))
        return (
            f"{self.dataset}\t{self.encryptor}\t{self.epochs}\t{self.ao:.6f}\t{self.ae:.6f}"
            f"\t{self.ec:.6f}\t{format_percent(self.ec)}\t{self.classifier_digest}\t{seeds}"
        )


@dataclass(frozen=True)
class Encryptor:
    """Named dataset transform used as one arm of an EC experiment."""

    name: str
    transform: Callable[[Dataset], Dataset]


def no_encryptor() -> Encryptor:
    return Encryptor("none", lambda d: d)


def archnet_encryptor(net: TrainedArchNet) -> Encryptor:
    return Encryptor(f"archnet:{net.config.name}", lambda d: encrypt_dataset(net, d))


def rc4_encryptor(key: bytes) -> Encryptor:
    return Encryptor("rc4", lambda d: rc4_encrypt_dataset(d, key))


def noise_encryptor(sigma: float, seed: int = 0) -> Encryptor:
    return Encryptor(f"noise:{sigma:g}", lambda d: noise_baseline(d, sigma, seed))


def ec_compare(
    plain: Dataset,
    enc: Dataset,
    encryptor_name: str,
    classifier_cfg: ClassifierConfig | None,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
) -> EcReport:
    """Train one classifier on the plain split and one on the (already
    encrypted) split, same epochs and same initialization seed, and report
    EC. ``classifier_cfg`` describes the plain arm; the encrypted arm reuses
    its block structure with the encrypted input shape."""
    if plain.n_train is None or enc.n_train is None:
        raise ValueError("ec comparison needs datasets with a train/val split")
    if len(plain) != len(enc):
        raise ValueError(f"plain has {len(plain)} samples but encrypted has {len(enc)}")
    if classifier_cfg is None:
        classifier_cfg = config_for(plain)

    plain_model = train_classifier(classifier_cfg, plain.train(), plain.val(), epochs, seed, lr=lr)
    ao = evaluate_accuracy(plain_model, plain.val())

    enc_cfg = ClassifierConfig(
        enc.sample_shape, enc.num_classes, classifier_cfg.conv_blocks, classifier_cfg.hidden
    )
    enc_model = train_classifier(enc_cfg, enc.train(), enc.val(), epochs, seed, lr=lr)
    ae = evaluate_accuracy(enc_model, enc.val())

    return EcReport(
        dataset=plain.name,
        encryptor=encryptor_name,
        epochs=epochs,
        ao=ao,
        ae=ae,
        ec=ec_value(ao, ae),
        classifier_digest=classifier_cfg.digest(),
        seeds={"classifier": seed},
        ao_curve=list(plain_model.accuracy_curve),
        ae_curve=list(enc_model.accuracy_curve),
    )


def ec_experiment(
    plain: Dataset,
    encryptor: Encryptor,
    classifier_cfg: ClassifierConfig | None,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
) -> EcReport:
    """ec_compare against a freshly applied encryptor (the split marker of
    ``plain`` carries through the transform)."""
    if plain.n_train is None:
        raise ValueError("ec_experiment needs a dataset with a train/val split")
    return ec_compare(plain, encryptor.transform(plain), encryptor.name, classifier_cfg, epochs, seed, lr=lr)


# ---------------------------------------------------------------------------
# steal-difficulty visualization


def visualize_channels(sample: np.ndarray, channels: tuple[int, int, int], out_path) -> None:
    """Render three channels of a C x H x W tensor as an RGB PNG, each channel
    min-max normalized to [0,255]. A constant channel maps to mid-gray."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 3:
        raise ValueError(f"sample must be (C,H,W), got {sample.shape}")
    if len(channels) != 3:
        raise ValueError(f"need exactly 3 channel indices, got {len(channels)}")
    c = sample.shape[0]
    for ch in channels:
        if not 0 <= ch < c:
            raise IndexError(f"channel {ch} out of range [0,{c})")

    planes = []
    for ch in channels:
        plane = sample[ch]
        lo, hi = plane.min(), plane.max()
        if hi > lo:
            planes.append(np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8))
        else:
            planes.append(np.full(plane.shape, 128, dtype=np.uint8))
    rgb = np.stack(planes, axis=-1)
    Image.fromarray(rgb, mode="RGB").save(out_path, format="PNG")


def pixel_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two 2-d images, bilinearly resampling the larger
    to the smaller when their sizes differ."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"inputs must be 2-d images, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")

    if a.shape != b.shape:
        if a.size > b.size:
            a = _resample(a, b.shape)
        else:
            b = _resample(b, a.shape)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant image")
    am = a - a.mean()
    bm = b - b.mean()
    return float((am * bm).sum() / math.sqrt((am * am).sum() * (bm * bm).sum()))


def _resample(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    pil = Image.fromarray(img.astype(np.float32), mode="F")
    return np.asarray(pil.resize((shape[1], shape[0]), Image.BILINEAR), dtype=np.float64)
