"""Command-line entry point wiring all modules into reproducible experiments.

Every command takes --out; the full invocation is serialized there as
experiment.json so a run can be re-created from its record. Report paths
write delimited records (CSV/TSV) plus rendered PNG figures.

Dataset arguments use a small addressing scheme:
    synth           480 synthetic shape images (seeded by --seed)
    synth:N         N synthetic shape images
    idx:IMG:LAB     IDX image/label file pair (MNIST/F-MNIST)
    cifar10:PATH    CIFAR-10 binary batch file
    PATH.aenc       encrypted tensor file (where an encrypted set is expected)
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, plots, protocol
from .arch import (
    CONFIG_BUILDERS,
    build_archnet,
    encrypt_dataset,
    get_config,
    load_archnet,
    save_archnet,
    train_identity,
)
from .classifier import config_for, evaluate_accuracy, train_classifier
from .data import Dataset, load_cifar10, load_idx, read_encrypted, split, synth_shapes, write_encrypted
from .optim import AdamState
from .rc4 import rc4_encrypt_dataset


@dataclass
class ExperimentSpec:
    command: str
    options: dict
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "experiment.json", "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    options = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    for k, v in options.items():
        if isinstance(v, Path):
            options[k] = str(v)
    return ExperimentSpec(args.command, options)


def load_plain_dataset(spec: str, seed: int) -> Dataset:
    if spec == "synth" or spec.startswith("synth:"):
        n = int(spec.split(":", 1)[1]) if ":" in spec else 480
        return synth_shapes(n, seed=seed)
    if spec.startswith("idx:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"idx dataset spec needs idx:IMAGES:LABELS, got {spec!r}")
        return load_idx(parts[1], parts[2])
    if spec.startswith("cifar10:"):
        return load_cifar10(spec.split(":", 1)[1])
    raise ValueError(f"unrecognized dataset spec {spec!r}")


def _write_loss_outputs(out_dir: Path, curve: list[float]) -> None:
    with open(out_dir / "loss_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(curve, 1):
            writer.writerow([i, f"{v:.10g}"])
    plots.save_loss_curve(curve, out_dir / "loss_curve.png")


def _write_ec_outputs(out_dir: Path, report: metrics.EcReport) -> None:
    with open(out_dir / "ec_report.json", "w") as f:
        f.write(report.to_json() + "\n")
    with open(out_dir / "ec_report.tsv", "w") as f:
        f.write(report.TSV_HEADER + "\n" + report.to_tsv_line() + "\n")
    plots.save_accuracy_curves(
        {"original": report.ao_curve, f"encrypted ({report.encryptor})": report.ae_curve},
        out_dir / "accuracy_curves.png",
    )


# ---------------------------------------------------------------------------
# commands


def cmd_train_archnet(args) -> int:
    out_dir = Path(args.out)
    _spec_from_args(args).write(out_dir)
    data = load_plain_dataset(args.dataset, args.seed)
    if args.split:
        data = split(data, args.split, args.seed)
    config = get_config(args.config)
    net = build_archnet(config, args.seed)
    if args.epochs > 0:
        train_identity(net, data, args.epochs, batch_size=args.batch, loss_kind=args.loss,
                       optimizer=AdamState(lr=args.lr))
    save_archnet(out_dir / "archnet.atae", net)
    _write_loss_outputs(out_dir, net.loss_curve)
    final = f", final loss {net.loss_curve[-1]:.6g}" if net.loss_curve else ""
    print(f"trained {config.name} for {args.epochs} epochs ({config.parameter_count()} parameters{final})")
    print(f"checkpoint: {out_dir / 'archnet.atae'}")
    return 0


def cmd_encrypt(args) -> int:
    out_dir = Path(args.out)
    _spec_from_args(args).write(out_dir)
    net = load_archnet(args.checkpoint)
    data = load_plain_dataset(args.dataset, args.seed)
    enc = encrypt_dataset(net, data)
    path = out_dir / "encrypted.aenc"
    write_encrypted(enc, path)
    print(f"{len(enc)} samples -> {enc.sample_shape} ciphertext tensors: {path}")
    return 0


def cmd_rc4_encrypt(args) -> int:
    out_dir = Path(args.out)
    _spec_from_args(args).write(out_dir)
    data = load_plain_dataset(args.dataset, args.seed)
    enc = rc4_encrypt_dataset(data, args.key.encode("utf-8"))
    path = out_dir / "encrypted.aenc"
    write_encrypted(enc, path)
    print(f"{len(enc)} samples scrambled with RC4: {path}")
    return 0


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    _spec_from_args(args).write(out_dir)
    plain = split(load_plain_dataset(args.plain, args.seed), args.split, args.seed)
    if args.encrypted == "none":
        enc, name = plain, "none"
    else:
        enc = split(read_encrypted(args.encrypted), args.split, args.seed)
        name = f"file:{Path(args.encrypted).name}"
    report = metrics.ec_compare(plain, enc, name, None, args.classifier_epochs, args.seed)
    _write_ec_outputs(out_dir, report)
    print(report.TSV_HEADER)
    print(report.to_tsv_line())
    return 0


def cmd_visualize(args) -> int:
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data = read_encrypted(args.encrypted)
    channels = tuple(int(c) for c in args.channels.split(","))
    if not 0 <= args.sample < len(data):
        raise IndexError(f"sample {args.sample} out of range [0,{len(data)})")
    metrics.visualize_channels(data.images[args.sample], channels, out_path)
    spec = _spec_from_args(args)
    with open(out_path.with_suffix(out_path.suffix + ".experiment.json"), "w") as f:
        json.dump(asdict(spec), f, indent=2, sort_keys=True)
    print(f"channels {channels} of sample {args.sample} -> {out_path}")
    return 0


def _parse_nodes(spec: str) -> int:
    """'1pub,1srv,Nwork' -> worker count; publisher and server are fixed at 1."""
    parts = {}
    for p in spec.split(","):
        m = re.fullmatch(r"(\d+)(pub|srv|work)", p)
        if not m:
            raise ValueError(f"node spec must look like '1pub,1srv,Nwork', got {spec!r}")
        parts[m.group(2)] = int(m.group(1))
    if set(parts) != {"pub", "srv", "work"} or parts["pub"] != 1 or parts["srv"] != 1:
        raise ValueError(f"node spec must look like '1pub,1srv,Nwork', got {spec!r}")
    if parts["work"] < 1:
        raise ValueError(f"need at least one worker, got {parts['work']}")
    return parts["work"]


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    _spec_from_args(args).write(out_dir)
    workers = _parse_nodes(args.nodes)
    data = split(load_plain_dataset(args.dataset, args.seed), args.split, args.seed)
    config = get_config(args.config)

    broker = protocol.run_server(task_timeout=args.task_timeout,
                                 assign_timeout=min(args.task_timeout, 30.0))
    worker_threads = []
    try:
        for i in range(workers):
            t = threading.Thread(
                target=_worker_main,
                args=(broker.address, args.epochs, args.seed, i == args.fail_worker),
                name=f"worker-{i}",
                daemon=True,
            )
            t.start()
            worker_threads.append(t)

        try:
            result = protocol.run_publisher(
                broker.address,
                data,
                config,
                archnet_epochs=args.archnet_epochs,
                archnet_lr=args.lr,
                required_epochs=args.epochs,
                seed=args.seed,
            )
        except protocol.TaskFailedError as e:
            with open(out_dir / "task_report.json", "w") as f:
                json.dump({"status": "failed", "reason": str(e)}, f, indent=2)
            print(f"task failed: {e}")
            return 0 if args.fail_worker >= 0 else 1
    finally:
        for t in worker_threads:
            t.join(timeout=args.task_timeout)
        broker.shutdown()

    # AO arm: the publisher's own baseline training on the plain data
    cfg = config_for(data)
    plain_model = train_classifier(cfg, data.train(), data.val(), args.epochs, args.seed)
    ao = evaluate_accuracy(plain_model, data.val())
    report = metrics.EcReport(
        dataset=data.name,
        encryptor=f"archnet:{config.name}",
        epochs=args.epochs,
        ao=ao,
        ae=result.server_accuracy,
        ec=metrics.ec_value(ao, result.server_accuracy),
        classifier_digest=cfg.digest(),
        seeds={"classifier": args.seed, "archnet": args.seed},
        ao_curve=list(plain_model.accuracy_curve),
        ae_curve=list(result.model.accuracy_curve),
    )
    _write_ec_outputs(out_dir, report)

    delay = result.delay
    with open(out_dir / "delay_report.json", "w") as f:
        json.dump({"status": "completed", "task_id": result.task_id,
                   "server_accuracy": result.server_accuracy,
                   "publisher_accuracy": result.local_accuracy,
                   "delay": delay.to_dict()}, f, indent=2)
    plots.save_delay_breakdown(
        {"t1 (encryptor)": delay.t1, "4*t2 (network)": 4 * delay.t2,
         "t3 (worker)": delay.t3, "t4 (queue)": delay.t4},
        out_dir / "delay_breakdown.png",
    )
    print(report.TSV_HEADER)
    print(report.to_tsv_line())
    print(f"delay: t0={delay.t0:.3f}s = t1 {delay.t1:.3f} + 4*t2 {4 * delay.t2:.6f} "
          f"+ t3 {delay.t3:.3f} + t4 {delay.t4:.3f}")
    return 0


def _worker_main(addr, epochs, seed, abort):
    try:
        protocol.run_worker(addr, None, epochs, seed, abort_mid_task=abort)
    except protocol.ProtocolError:
        pass  # losing the race for the single task is normal


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="archnet", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-archnet", help="train an encoder/decoder pair as an identity map")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", choices=sorted(CONFIG_BUILDERS), required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--loss", choices=["mse", "bce"], default="mse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--split", default=None, help="optional a:b ratio; training then uses only the train side")
    p.set_defaults(func=cmd_train_archnet)

    p = sub.add_parser("encrypt", help="encrypt a dataset with a trained encoder checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("rc4-encrypt", help="scramble a dataset with the RC4 baseline")
    p.add_argument("--key", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rc4_encrypt)

    p = sub.add_parser("evaluate", help="EC experiment: plain vs encrypted classifier accuracy")
    p.add_argument("--plain", required=True)
    p.add_argument("--encrypted", required=True, help="AENC file, or 'none' for the null encryptor")
    p.add_argument("--classifier-epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ec-run")
    p.add_argument("--split", default="5:1")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="render three ciphertext channels as an RGB image")
    p.add_argument("--encrypted", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--channels", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("simulate", help="run the three-party protocol over loopback")
    p.add_argument("--nodes", default="1pub,1srv,2work")
    p.add_argument("--dataset", default="synth")
    p.add_argument("--epochs", type=int, default=5, help="classifier epochs on the worker")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="simulate-run")
    p.add_argument("--config", choices=sorted(CONFIG_BUILDERS), default="desk")
    p.add_argument("--archnet-epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--split", default="5:1")
    p.add_argument("--task-timeout", type=float, default=600.0)
    p.add_argument("--fail-worker", type=int, default=-1,
                   help="index of a worker that dies mid-task (failure drill)")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, IndexError, protocol.ProtocolError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
