"""Arch-shaped encoder/decoder pairs trained as an identity map.

The H-encoder lifts images into a higher-dimensional tensor space (its last
layer is a transposed convolution that doubles the spatial extent); the
L-decoder maps that space back to the original image. Training the composed
pair against its own input yields an encryption/decryption function pair:
the encoder output is the ciphertext, and only the decoder holder can
reconstruct the plaintext.

Convolutions default to 3x3 stride-1 pad-1 (shape preserving). The decoder
may not contain transposed convolutions, so its first convolution runs at
stride 2 to undo the encoder's doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_from_bytes, checkpoint_to_bytes
from .data import Dataset, EncryptedDataset
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tensor


class ConfigError(ValueError):
    """Layer stack fails validation (incompatible or misplaced layers)."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss)."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | conv_transpose | linear | relu
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    in_features: int | None = None
    out_features: int | None = None
    out_shape: tuple[int, int, int] | None = None  # reshape target after linear

    def describe(self) -> str:
        if self.kind == "conv":
            extra = f", stride={self.stride}" if self.stride != 1 else ""
            return f"Conv({self.in_channels},{self.out_channels}{extra})"
        if self.kind == "conv_transpose":
            return f"ConvTranspose({self.in_channels},{self.out_channels})"
        if self.kind == "linear":
            return f"Linear({self.in_features},{self.out_features})"
        return "Relu()"


def conv(cin: int, cout: int, kernel: int = 3, stride: int = 1, padding: int = 1) -> LayerSpec:
    return LayerSpec("conv", in_channels=cin, out_channels=cout, kernel=kernel, stride=stride, padding=padding)


def conv_transpose(cin: int, cout: int, kernel: int = 2, stride: int = 2) -> LayerSpec:
    return LayerSpec("conv_transpose", in_channels=cin, out_channels=cout, kernel=kernel, stride=stride, padding=0)


def linear_layer(in_features: int, out_features: int, out_shape: tuple[int, int, int]) -> LayerSpec:
    return LayerSpec("linear", in_features=in_features, out_features=out_features, out_shape=out_shape)


def relu_layer() -> LayerSpec:
    return LayerSpec("relu")


def _propagate(spec: LayerSpec, shape: tuple[int, int, int], where: str) -> tuple[int, int, int]:
    c, h, w = shape
    if spec.kind == "conv":
        if spec.in_channels != c:
            raise ConfigError(f"{where}: {spec.describe()} expects {spec.in_channels} channels, gets {c}")
        ho = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"{where}: {spec.describe()} collapses {h}x{w} input to {ho}x{wo}")
        return (spec.out_channels, ho, wo)
    if spec.kind == "conv_transpose":
        if spec.in_channels != c:
            raise ConfigError(f"{where}: {spec.describe()} expects {spec.in_channels} channels, gets {c}")
        return (spec.out_channels, (h - 1) * spec.stride + spec.kernel, (w - 1) * spec.stride + spec.kernel)
    if spec.kind == "linear":
        if spec.in_features != c * h * w:
            raise ConfigError(
                f"{where}: {spec.describe()} expects {spec.in_features} features, gets {c}x{h}x{w}={c * h * w}"
            )
        if spec.out_shape is None or int(np.prod(spec.out_shape)) != spec.out_features:
            raise ConfigError(f"{where}: {spec.describe()} needs an out_shape with {spec.out_features} elements")
        return spec.out_shape
    if spec.kind == "relu":
        return shape
    raise ConfigError(f"{where}: unknown layer kind {spec.kind!r}")


@dataclass(frozen=True)
class ArchNetConfig:
    name: str
    input_shape: tuple[int, int, int]
    encoder_layers: tuple[LayerSpec, ...]
    decoder_layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "decoder_layers", tuple(self.decoder_layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def validate(self) -> None:
        if not self.encoder_layers or self.encoder_layers[-1].kind != "conv_transpose":
            raise ConfigError(f"{self.name}: encoder must end with a transposed convolution")
        for i, spec in enumerate(self.decoder_layers):
            if spec.kind == "conv_transpose":
                raise ConfigError(f"{self.name}: decoder layer {i} is a transposed convolution, which is not allowed")
        shape = self.input_shape
        for i, spec in enumerate(self.encoder_layers):
            prev = self.encoder_layers[i - 1].describe() if i else "input"
            shape = _propagate(spec, shape, f"{self.name} encoder layer {i} (after {prev})")
        enc_shape = shape
        if int(np.prod(enc_shape)) <= int(np.prod(self.input_shape)):
            raise ConfigError(
                f"{self.name}: encoder output {enc_shape} is not higher-dimensional than input {self.input_shape}"
            )
        for i, spec in enumerate(self.decoder_layers):
            prev = self.decoder_layers[i - 1].describe() if i else "encoder output"
            shape = _propagate(spec, shape, f"{self.name} decoder layer {i} (after {prev})")
        if shape != self.input_shape:
            raise ConfigError(f"{self.name}: decoder output {shape} does not round-trip to input {self.input_shape}")

    @property
    def encrypted_shape(self) -> tuple[int, int, int]:
        shape = self.input_shape
        for i, spec in enumerate(self.encoder_layers):
            shape = _propagate(spec, shape, f"{self.name} encoder layer {i}")
        return shape

    def parameter_count(self) -> int:
        total = 0
        for spec in self.encoder_layers + self.decoder_layers:
            if spec.kind in ("conv", "conv_transpose"):
                total += spec.out_channels * spec.in_channels * spec.kernel**2 + spec.out_channels
            elif spec.kind == "linear":
                total += spec.out_features * spec.in_features + spec.out_features
        return total

    def to_dict(self) -> dict:
        def spec_dict(s: LayerSpec) -> dict:
            d = {"kind": s.kind}
            for key in ("in_channels", "out_channels", "in_features", "out_features", "out_shape"):
                v = getattr(s, key)
                if v is not None:
                    d[key] = list(v) if isinstance(v, tuple) else v
            if s.kind in ("conv", "conv_transpose"):
                d.update(kernel=s.kernel, stride=s.stride, padding=s.padding)
            return d

        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "encoder_layers": [spec_dict(s) for s in self.encoder_layers],
            "decoder_layers": [spec_dict(s) for s in self.decoder_layers],
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchNetConfig":
        def spec(sd: dict) -> LayerSpec:
            kw = dict(sd)
            kind = kw.pop("kind")
            if "out_shape" in kw:
                kw["out_shape"] = tuple(kw["out_shape"])
            return LayerSpec(kind, **kw)

        return ArchNetConfig(
            d["name"],
            tuple(d["input_shape"]),
            tuple(spec(s) for s in d["encoder_layers"]),
            tuple(spec(s) for s in d["decoder_layers"]),
        )


def _table_decoder(out_channels: int) -> tuple[LayerSpec, ...]:
    # first conv runs at stride 2 to undo the encoder's spatial doubling
    return (
        conv(10, 10, stride=2),
        conv(10, 30),
        conv(30, 10),
        conv(10, 10),
        conv(10, 10),
        relu_layer(),
        conv(10, 5),
        conv(5, 3),
        relu_layer(),
        conv(3, out_channels),
    )


def mnist_config(name: str = "mnist") -> ArchNetConfig:
    return ArchNetConfig(
        name,
        (1, 28, 28),
        (
            conv(1, 3),
            conv(3, 10),
            conv(10, 10),
            linear_layer(10 * 28 * 28, 20 * 28 * 28, (20, 28, 28)),
            relu_layer(),
            conv(20, 20),
            conv_transpose(20, 10),
        ),
        _table_decoder(1),
    )


def fmnist_config() -> ArchNetConfig:
    return mnist_config(name="fmnist")


def cifar10_config() -> ArchNetConfig:
    return ArchNetConfig(
        "cifar10",
        (3, 32, 32),
        (
            conv(3, 3),
            conv(3, 10),
            conv(10, 20),
            conv(20, 20),
            conv_transpose(20, 10),
        ),
        _table_decoder(3),
    )


def desk_config() -> ArchNetConfig:
    """8x8 single-channel miniature of the MNIST stack, small enough for CI."""
    return ArchNetConfig(
        "desk",
        (1, 8, 8),
        (
            conv(1, 2),
            conv(2, 4),
            conv(4, 4),
            linear_layer(4 * 8 * 8, 8 * 8 * 8, (8, 8, 8)),
            relu_layer(),
            conv(8, 8),
            conv_transpose(8, 4),
        ),
        (
            conv(4, 4, stride=2),
            conv(4, 8),
            conv(8, 4),
            conv(4, 4),
            relu_layer(),
            conv(4, 2),
            conv(2, 1),
        ),
    )


CONFIG_BUILDERS = {
    "mnist": mnist_config,
    "fmnist": fmnist_config,
    "cifar10": cifar10_config,
    "desk": desk_config,
}


def get_config(name: str) -> ArchNetConfig:
    try:
        return CONFIG_BUILDERS[name]()
    except KeyError:
        raise ConfigError(f"unknown config {name!r}, expected one of {sorted(CONFIG_BUILDERS)}") from None


@dataclass
class TrainedArchNet:
    config: ArchNetConfig
    encoder_params: dict[str, Tensor]
    decoder_params: dict[str, Tensor]
    loss_curve: list[float] = field(default_factory=list)
    rng_seed: int = 0
    output_sigmoid: bool = False  # set when trained with the BCE loss

    def parameters(self) -> dict[str, Tensor]:
        merged = dict(self.encoder_params)
        merged.update(self.decoder_params)
        return merged


def _init_layer(spec: LayerSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
    if spec.kind == "conv":
        fan_in = spec.in_channels * spec.kernel**2
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
        return w, np.zeros(spec.out_channels)
    if spec.kind == "conv_transpose":
        fan_in = spec.in_channels * spec.kernel**2
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel))
        return w, np.zeros(spec.out_channels)
    if spec.kind == "linear":
        bound = 1.0 / math.sqrt(spec.in_features)
        w = rng.uniform(-bound, bound, (spec.out_features, spec.in_features))
        return w, np.zeros(spec.out_features)
    return None


def build_archnet(config: ArchNetConfig, seed: int) -> TrainedArchNet:
    """Allocate an untrained net: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    biases zero, deterministic for a fixed seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, dict[str, Tensor]] = {"encoder": {}, "decoder": {}}
    for side, layers in (("encoder", config.encoder_layers), ("decoder", config.decoder_layers)):
        for i, spec in enumerate(layers):
            init = _init_layer(spec, rng)
            if init is None:
                continue
            w, b = init
            params[side][f"{side}.{i}.weight"] = Tensor(w, requires_grad=True)
            params[side][f"{side}.{i}.bias"] = Tensor(b, requires_grad=True)
    return TrainedArchNet(config, params["encoder"], params["decoder"], rng_seed=seed)


def _apply_stack(x: Tensor, layers: tuple[LayerSpec, ...], params: dict[str, Tensor], side: str) -> Tensor:
    for i, spec in enumerate(layers):
        if spec.kind == "conv":
            x = T.conv2d(x, params[f"{side}.{i}.weight"], params[f"{side}.{i}.bias"], spec.stride, spec.padding)
        elif spec.kind == "conv_transpose":
            x = T.conv_transpose2d(x, params[f"{side}.{i}.weight"], params[f"{side}.{i}.bias"], spec.stride)
        elif spec.kind == "linear":
            n = x.shape[0]
            flat = T.reshape(x, (n, spec.in_features))
            out = T.linear(flat, params[f"{side}.{i}.weight"], params[f"{side}.{i}.bias"])
            x = T.reshape(out, (n,) + spec.out_shape)
        elif spec.kind == "relu":
            x = T.relu(x)
    return x


def encode(net: TrainedArchNet, x: Tensor) -> Tensor:
    return _apply_stack(x, net.config.encoder_layers, net.encoder_params, "encoder")


def decode(net: TrainedArchNet, x: Tensor) -> Tensor:
    out = _apply_stack(x, net.config.decoder_layers, net.decoder_params, "decoder")
    if net.output_sigmoid:
        out = T.sigmoid(out)
    return out


def train_identity(
    net: TrainedArchNet,
    data: Dataset,
    epochs: int,
    batch_size: int = 32,
    loss_kind: str = "mse",
    optimizer: AdamState | None = None,
) -> TrainedArchNet:
    """Train decoder(encoder(x)) toward x on the train split (or all samples
    when unsplit). Appends one mean loss per epoch; deterministic for a fixed
    net seed and dataset."""
    if loss_kind not in ("mse", "bce"):
        raise ValueError(f"loss_kind must be 'mse' or 'bce', got {loss_kind!r}")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if tuple(data.sample_shape) != net.config.input_shape:
        raise T.ShapeError(
            f"dataset samples {data.sample_shape} do not match config input {net.config.input_shape}"
        )
    net.output_sigmoid = loss_kind == "bce"
    loss_fn = T.mse_loss if loss_kind == "mse" else T.bce_loss
    if optimizer is None:
        optimizer = AdamState()
    params = net.parameters()
    images = data.train().images if data.n_train is not None else data.images
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")

    for epoch in range(epochs):
        order = np.random.default_rng((net.rng_seed, epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = Tensor(images[idx])
            out = decode(net, encode(net, batch))
            loss = loss_fn(out, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // batch_size}")
            T.backward(loss)
            adam_step(params, optimizer)
            zero_grads(params)
            total += value * len(idx)
        net.loss_curve.append(total / n)
    return net


def _run_batched(net: TrainedArchNet, images: np.ndarray, fn, out_shape: tuple[int, int, int], batch_size: int = 64) -> np.ndarray:
    n = images.shape[0]
    out = np.empty((n,) + out_shape)
    with T.no_grad():
        for start in range(0, n, batch_size):
            out[start : start + batch_size] = fn(net, Tensor(images[start : start + batch_size])).data
    return out


def encrypt_dataset(net: TrainedArchNet, data: Dataset) -> EncryptedDataset:
    """Run the encoder over every sample; labels and split marker carry over."""
    if tuple(data.sample_shape) != net.config.input_shape:
        raise T.ShapeError(
            f"dataset samples {data.sample_shape} do not match config input {net.config.input_shape}"
        )
    enc = _run_batched(net, data.images, encode, net.config.encrypted_shape)
    return EncryptedDataset(
        f"{data.name}:archnet",
        enc,
        data.labels.copy(),
        data.num_classes,
        n_train=data.n_train,
        encryptor=f"archnet:{net.config.name}",
    )


def decrypt_dataset(net: TrainedArchNet, enc: EncryptedDataset) -> Dataset:
    """Run the decoder over every ciphertext tensor; output is clamped to the
    valid pixel range [0,1]."""
    if tuple(enc.sample_shape) != net.config.encrypted_shape:
        raise T.ShapeError(
            f"ciphertext samples {enc.sample_shape} do not match encoder output {net.config.encrypted_shape}"
        )
    dec = _run_batched(net, enc.images, decode, net.config.input_shape)
    return Dataset(
        f"{enc.name}:decrypted",
        np.clip(dec, 0.0, 1.0),
        enc.labels.copy(),
        enc.num_classes,
        n_train=enc.n_train,
    )


# ---------------------------------------------------------------------------
# checkpointing


def archnet_to_bytes(net: TrainedArchNet) -> bytes:
    tensors = {name: p.data for name, p in net.parameters().items()}
    meta = {
        "kind": "archnet",
        "config": net.config.to_dict(),
        "rng_seed": net.rng_seed,
        "output_sigmoid": net.output_sigmoid,
    }
    return checkpoint_to_bytes(tensors, meta)


def archnet_from_bytes(raw: bytes) -> TrainedArchNet:
    tensors, meta = checkpoint_from_bytes(raw)
    if not meta or meta.get("kind") != "archnet":
        raise ConfigError("checkpoint does not contain an archnet model")
    config = ArchNetConfig.from_dict(meta["config"])
    config.validate()
    net = build_archnet(config, int(meta.get("rng_seed", 0)))
    net.output_sigmoid = bool(meta.get("output_sigmoid", False))
    for name, p in net.parameters().items():
        if name not in tensors:
            raise ConfigError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, config expects {p.data.shape}"
            )
        p.data = tensors[name]
    return net


def save_archnet(path, net: TrainedArchNet) -> None:
    with open(path, "wb") as f:
        f.write(archnet_to_bytes(net))


def load_archnet(path) -> TrainedArchNet:
    with open(path, "rb") as f:
        return archnet_from_bytes(f.read())
