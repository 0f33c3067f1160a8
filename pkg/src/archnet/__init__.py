"""Neural dataset encryption toolkit.

Train an arch-shaped encoder/decoder pair as an identity map, encrypt image
datasets into a higher-dimensional tensor space, measure how learnable the
ciphertext stays (the EC metric) against an RC4 baseline, and simulate the
publisher/server/worker protocol the scheme is built for.
"""

from .arch import (
    ArchNetConfig,
    LayerSpec,
    TrainedArchNet,
    build_archnet,
    decrypt_dataset,
    desk_config,
    encrypt_dataset,
    get_config,
    load_archnet,
    save_archnet,
    train_identity,
)
from .classifier import ClassifierConfig, TrainedClassifier, evaluate_accuracy, train_classifier
from .data import Dataset, EncryptedDataset, load_cifar10, load_idx, split, synth_shapes
from .metrics import EcReport, ec_experiment, ec_value, pixel_correlation, visualize_channels
from .optim import AdamState, adam_step
from .rc4 import Rc4State, noise_baseline, rc4_apply, rc4_encrypt_dataset, rc4_init
from .tensor import Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ArchNetConfig",
    "ClassifierConfig",
    "Dataset",
    "EcReport",
    "EncryptedDataset",
    "LayerSpec",
    "Rc4State",
    "Tensor",
    "TrainedArchNet",
    "TrainedClassifier",
    "adam_step",
    "backward",
    "build_archnet",
    "decrypt_dataset",
    "desk_config",
    "ec_experiment",
    "ec_value",
    "encrypt_dataset",
    "evaluate_accuracy",
    "get_config",
    "grad_check",
    "load_archnet",
    "load_cifar10",
    "load_idx",
    "noise_baseline",
    "pixel_correlation",
    "rc4_apply",
    "rc4_encrypt_dataset",
    "rc4_init",
    "save_archnet",
    "split",
    "synth_shapes",
    "train_classifier",
    "train_identity",
    "visualize_channels",
]
