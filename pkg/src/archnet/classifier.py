"""Small CNN base model: the label-producing decoder trained directly on
plain or encrypted sample sets.

Architecture: repeated [conv3x3 -> relu -> optional maxpool2] blocks, then
flatten -> linear -> relu -> linear(num_classes). Trained with Adam on a
softmax cross-entropy loss.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_from_bytes, checkpoint_to_bytes
from .data import Dataset, EncryptedDataset
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tensor


class RepresentationError(ValueError):
    """Train/val sets are not the same representation (plain vs encrypted)."""


class EmptyDatasetError(ValueError):
    """Accuracy over zero samples is undefined."""


@dataclass(frozen=True)
class ClassifierConfig:
    input_shape: tuple[int, int, int]
    num_classes: int
    conv_blocks: tuple[tuple[int, bool], ...] = ((8, True), (16, True))  # (out_channels, pool)
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_blocks", tuple((int(c), bool(p)) for c, p in self.conv_blocks))
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        c, h, w = self.input_shape
        for out_ch, pool in self.conv_blocks:
            if pool:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"input {self.input_shape} too small for {len(self.conv_blocks)} pooled blocks")

    def flat_features(self) -> int:
        c, h, w = self.input_shape
        for out_ch, pool in self.conv_blocks:
            c = out_ch
            if pool:
                h, w = h // 2, w // 2
        return c * h * w

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "conv_blocks": [[c, p] for c, p in self.conv_blocks],
            "hidden": self.hidden,
        }

    @staticmethod
    def from_dict(d: dict) -> "ClassifierConfig":
        return ClassifierConfig(
            tuple(d["input_shape"]),
            d["num_classes"],
            tuple((c, bool(p)) for c, p in d["conv_blocks"]),
            d["hidden"],
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def config_for(data: Dataset, conv_blocks=((8, True), (16, True)), hidden: int = 64) -> ClassifierConfig:
    return ClassifierConfig(data.sample_shape, data.num_classes, conv_blocks, hidden)


@dataclass
class TrainedClassifier:
    config: ClassifierConfig
    params: dict[str, Tensor]
    accuracy_curve: list[float] = field(default_factory=list)


def build_classifier(config: ClassifierConfig, seed: int) -> TrainedClassifier:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    cin = config.input_shape[0]
    for i, (cout, _pool) in enumerate(config.conv_blocks):
        params[f"conv{i}.weight"] = uniform((cout, cin, 3, 3), cin * 9)
        params[f"conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    flat = config.flat_features()
    params["fc1.weight"] = uniform((config.hidden, flat), flat)
    params["fc1.bias"] = Tensor(np.zeros(config.hidden), requires_grad=True)
    params["fc2.weight"] = uniform((config.num_classes, config.hidden), config.hidden)
    params["fc2.bias"] = Tensor(np.zeros(config.num_classes), requires_grad=True)
    return TrainedClassifier(config, params)


def logits(model: TrainedClassifier, x: Tensor) -> Tensor:
    p = model.params
    for i, (_cout, pool) in enumerate(model.config.conv_blocks):
        x = T.relu(T.conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=1, padding=1))
        if pool:
            x = T.maxpool2d(x, 2, 2)
    n = x.shape[0]
    x = T.reshape(x, (n, model.config.flat_features()))
    x = T.relu(T.linear(x, p["fc1.weight"], p["fc1.bias"]))
    return T.linear(x, p["fc2.weight"], p["fc2.bias"])


def _check_pair(config: ClassifierConfig, train: Dataset, val: Dataset) -> None:
    if isinstance(train, EncryptedDataset) != isinstance(val, EncryptedDataset):
        raise RepresentationError(
            f"train is {type(train).__name__} but val is {type(val).__name__}; both sides must match"
        )
    for part, d in (("train", train), ("val", val)):
        if tuple(d.sample_shape) != config.input_shape:
            raise T.ShapeError(
                f"{part} samples {d.sample_shape} do not match classifier input {config.input_shape}"
            )
        if len(d) and int(d.labels.max()) >= config.num_classes:
            raise ValueError(
                f"{part} label {int(d.labels.max())} out of range [0,{config.num_classes})"
            )


def train_classifier(
    config: ClassifierConfig,
    train: Dataset,
    val: Dataset,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> TrainedClassifier:
    """Cross-entropy training with Adam; appends one validation accuracy per
    epoch. Deterministic for a fixed seed."""
    _check_pair(config, train, val)
    model = build_classifier(config, seed)
    state = AdamState(lr=lr)
    n = len(train)
    for epoch in range(epochs):
        order = np.random.default_rng((seed, epoch)).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out = logits(model, Tensor(train.images[idx]))
            loss = T.softmax_cross_entropy(out, train.labels[idx])
            T.backward(loss)
            adam_step(model.params, state)
            zero_grads(model.params)
        model.accuracy_curve.append(evaluate_accuracy(model, val))
    return model


def predict(model: TrainedClassifier, data: Dataset, batch_size: int = 256) -> np.ndarray:
    preds = np.empty(len(data), dtype=np.int64)
    with T.no_grad():
        for start in range(0, len(data), batch_size):
            out = logits(model, Tensor(data.images[start : start + batch_size]))
            preds[start : start + batch_size] = out.data.argmax(axis=1)
    return preds


def evaluate_accuracy(model: TrainedClassifier, data: Dataset) -> float:
    """Exact fraction of argmax-correct predictions."""
    if len(data) == 0:
        raise EmptyDatasetError("accuracy of an empty dataset is undefined")
    if tuple(data.sample_shape) != model.config.input_shape:
        raise T.ShapeError(
            f"samples {data.sample_shape} do not match classifier input {model.config.input_shape}"
        )
    return float(np.mean(predict(model, data) == data.labels))


# ---------------------------------------------------------------------------
# checkpointing


def classifier_to_bytes(model: TrainedClassifier) -> bytes:
    tensors = {name: p.data for name, p in model.params.items()}
    return checkpoint_to_bytes(tensors, {"kind": "classifier", "config": model.config.to_dict()})


def classifier_from_bytes(raw: bytes) -> TrainedClassifier:
    tensors, meta = checkpoint_from_bytes(raw)
    if not meta or meta.get("kind") != "classifier":
        raise ValueError("checkpoint does not contain a classifier model")
    config = ClassifierConfig.from_dict(meta["config"])
    model = build_classifier(config, seed=0)
    for name, p in model.params.items():
        if name not in tensors:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, config expects {p.data.shape}"
            )
        p.data = tensors[name]
    return model
