"""Tripartite task protocol: dataset publisher, broker server, and compute
workers exchanging frames over TCP loopback.

Frame layout:
    4-byte big-endian payload length | 1-byte message tag | payload |
    4-byte big-endian CRC32 over tag + payload

The publisher trains the encryptor locally, ships only encrypted tensors,
and receives back a validated classifier checkpoint. The server brokers
tasks FIFO, holds the validation split back from workers, validates the
returned model itself, and pays the worker on success. Workers see encrypted
training data and their labels, nothing else.

Timing decomposition: t1 encryptor training, t2 equivalent per-leg network
delay (mean of the 4 measured transfer legs), t3 worker compute, t4 server
queue/wait; t0 = t1 + 4*t2 + t3 + t4 by construction.
"""

from __future__ import annotations

import hashlib
import os
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

from . import tensor as T
from .arch import ArchNetConfig, TrainedArchNet, build_archnet, encrypt_dataset, train_identity
from .classifier import (
    ClassifierConfig,
    TrainedClassifier,
    classifier_from_bytes,
    classifier_to_bytes,
    config_for,
    evaluate_accuracy,
    train_classifier,
)
from .data import Dataset, encrypted_from_bytes, encrypted_to_bytes, split
from .optim import AdamState

PORT_ENV = "ARCHNET_PORT"
MAX_PAYLOAD_DEFAULT = 256 * 1024 * 1024
HEADER_SIZE = 5

Tap = Callable[[str, bytes], None]  # (direction "send"/"recv", raw frame)


class ProtocolError(Exception):
    """Base for wire-protocol failures."""


class CrcError(ProtocolError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class OversizeFrameError(ProtocolError):
    pass


class UnknownTagError(ProtocolError):
    pass


class ConnectionClosedError(ProtocolError):
    pass


class IntegrityError(ProtocolError):
    """Payload digest does not match the announced digest."""


class TaskFailedError(ProtocolError):
    """The task could not be completed; carries the server's explanation."""


class StateError(RuntimeError):
    """Illegal task status transition."""


class MessageType(IntEnum):
    POST_DATASET = 1
    TASK_ANNOUNCE = 2
    REQUEST_TASK = 3
    DATASET_TRANSFER = 4
    MODEL_RETURN = 5
    VALIDATION_RESULT = 6
    PAYMENT_ACK = 7
    ERROR = 8


@dataclass(frozen=True)
class Message:
    type: MessageType
    payload: bytes


def encode_message(msg: Message, max_payload: int = MAX_PAYLOAD_DEFAULT) -> bytes:
    if len(msg.payload) > max_payload:
        raise OversizeFrameError(f"payload of {len(msg.payload)} bytes exceeds limit {max_payload}")
    body = bytes([msg.type]) + msg.payload
    return struct.pack(">I", len(msg.payload)) + body + struct.pack(">I", zlib.crc32(body))


def decode_message(frame: bytes, max_payload: int = MAX_PAYLOAD_DEFAULT) -> Message:
    if len(frame) < HEADER_SIZE + 4:
        raise TruncatedFrameError(f"frame of {len(frame)} bytes is shorter than the fixed overhead")
    (length,) = struct.unpack_from(">I", frame, 0)
    if length > max_payload:
        raise OversizeFrameError(f"announced payload of {length} bytes exceeds limit {max_payload}")
    expected = HEADER_SIZE + length + 4
    if len(frame) < expected:
        raise TruncatedFrameError(f"frame of {len(frame)} bytes, header promises {expected}")
    if len(frame) > expected:
        raise ProtocolError(f"{len(frame) - expected} trailing bytes after the frame")
    body = frame[4 : 5 + length]
    (crc_stored,) = struct.unpack_from(">I", frame, 5 + length)
    crc_actual = zlib.crc32(body)
    if crc_stored != crc_actual:
        raise CrcError(f"CRC mismatch: stored 0x{crc_stored:08x}, computed 0x{crc_actual:08x}")
    tag = frame[4]
    try:
        mtype = MessageType(tag)
    except ValueError:
        raise UnknownTagError(f"unknown message tag 0x{tag:02x}") from None
    return Message(mtype, bytes(frame[5 : 5 + length]))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosedError(f"connection closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


def send_message(sock: socket.socket, msg: Message, tap: Tap | None = None,
                 max_payload: int = MAX_PAYLOAD_DEFAULT) -> float:
    """Send one frame; returns the wall-clock duration of the send."""
    frame = encode_message(msg, max_payload)
    start = time.perf_counter()
    sock.sendall(frame)
    elapsed = time.perf_counter() - start
    if tap:
        tap("send", frame)
    return elapsed


def recv_message(sock: socket.socket, tap: Tap | None = None,
                 max_payload: int = MAX_PAYLOAD_DEFAULT) -> tuple[Message, float]:
    """Receive one frame; returns (message, transfer seconds). The clock
    starts after the first byte arrives, so blocking idle time while the
    peer works is not counted as transfer."""
    first = _recv_exact(sock, 1)
    start = time.perf_counter()
    header = first + _recv_exact(sock, HEADER_SIZE - 1)
    (length,) = struct.unpack_from(">I", header, 0)
    if length > max_payload:
        raise OversizeFrameError(f"announced payload of {length} bytes exceeds limit {max_payload}")
    body = _recv_exact(sock, length + 4)
    elapsed = time.perf_counter() - start
    frame = header + body
    if tap:
        tap("recv", frame)
    return decode_message(frame, max_payload), elapsed


# ---------------------------------------------------------------------------
# payload packing


def _pack_blob(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, fmt: str):
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += struct.calcsize(fmt)
        return vals if len(vals) > 1 else vals[0]

    def blob(self) -> bytes:
        n = self.take(">I")
        if self.off + n > len(self.buf):
            raise TruncatedFrameError(f"blob of {n} bytes truncated at offset {self.off}")
        b = self.buf[self.off : self.off + n]
        self.off += n
        return b

    def done(self):
        if self.off != len(self.buf):
            raise ProtocolError(f"{len(self.buf) - self.off} unparsed payload bytes")


def pack_post_dataset(required_epochs: int, fee: int, train_blob: bytes, val_blob: bytes) -> Message:
    payload = (
        struct.pack(">II", required_epochs, fee)
        + hashlib.sha256(train_blob).digest()
        + hashlib.sha256(val_blob).digest()
        + _pack_blob(train_blob)
        + _pack_blob(val_blob)
    )
    return Message(MessageType.POST_DATASET, payload)


def unpack_post_dataset(payload: bytes):
    r = _Reader(payload)
    epochs, fee = r.take(">II")
    train_digest = r.buf[r.off : r.off + 32]
    r.off += 32
    val_digest = r.buf[r.off : r.off + 32]
    r.off += 32
    train_blob = r.blob()
    val_blob = r.blob()
    r.done()
    return epochs, fee, train_digest, val_digest, train_blob, val_blob


def pack_task_announce(task_id: int, required_epochs: int, train_digest: bytes) -> Message:
    return Message(MessageType.TASK_ANNOUNCE, struct.pack(">II", task_id, required_epochs) + train_digest)


def unpack_task_announce(payload: bytes):
    r = _Reader(payload)
    task_id, epochs = r.take(">II")
    digest = r.buf[r.off : r.off + 32]
    r.off += 32
    r.done()
    return task_id, epochs, digest


def pack_dataset_transfer(task_id: int, blob: bytes) -> Message:
    return Message(MessageType.DATASET_TRANSFER, struct.pack(">I", task_id) + _pack_blob(blob))


def unpack_dataset_transfer(payload: bytes):
    r = _Reader(payload)
    task_id = r.take(">I")
    blob = r.blob()
    r.done()
    return task_id, blob


def pack_model_return(task_id: int, t3: float, leg: float, checkpoint: bytes) -> Message:
    return Message(MessageType.MODEL_RETURN, struct.pack(">Idd", task_id, t3, leg) + _pack_blob(checkpoint))


def unpack_model_return(payload: bytes):
    r = _Reader(payload)
    task_id, t3, leg = r.take(">Idd")
    blob = r.blob()
    r.done()
    return task_id, t3, leg, blob


def pack_validation_result(task_id: int, accuracy: float, t3: float, leg2: float, leg3: float, t4: float) -> Message:
    return Message(MessageType.VALIDATION_RESULT, struct.pack(">Iddddd", task_id, accuracy, t3, leg2, leg3, t4))


def unpack_validation_result(payload: bytes):
    r = _Reader(payload)
    vals = r.take(">Iddddd")
    r.done()
    return vals  # task_id, accuracy, t3, leg2, leg3, t4


def pack_payment_ack(task_id: int, amount: int) -> Message:
    return Message(MessageType.PAYMENT_ACK, struct.pack(">II", task_id, amount))


def unpack_payment_ack(payload: bytes):
    r = _Reader(payload)
    vals = r.take(">II")
    r.done()
    return vals


ERR_GENERIC = 1
ERR_NO_TASK = 2
ERR_BAD_CHECKPOINT = 3
ERR_TASK_FAILED = 4
ERR_DIGEST = 5
ERR_SHAPE = 6


def pack_error(task_id: int, code: int, text: str) -> Message:
    return Message(MessageType.ERROR, struct.pack(">IH", task_id, code) + _pack_blob(text.encode("utf-8")))


def unpack_error(payload: bytes):
    r = _Reader(payload)
    task_id, code = r.take(">IH")
    text = r.blob().decode("utf-8", errors="replace")
    r.done()
    return task_id, code, text


# ---------------------------------------------------------------------------
# task records and delay accounting


class TaskStatus:
    ORDER = ["posted", "assigned", "trained", "validated", "paid", "returned"]
    FAILED = "failed"


@dataclass
class TaskRecord:
    task_id: int
    dataset_digest: str
    required_epochs: int
    status: str = "posted"
    history: list[tuple[str, float]] = field(default_factory=list)
    requeues: int = 0
    validation_started_at: float | None = None

    def __post_init__(self):
        if not self.history:
            self.history.append((self.status, time.time()))

    def transition(self, new_status: str) -> None:
        """Statuses advance strictly in order. Two exceptions: a single
        requeue (assigned -> posted) and the terminal 'failed'."""
        now = time.time()
        if new_status == TaskStatus.FAILED:
            if self.status == TaskStatus.FAILED:
                raise StateError(f"task {self.task_id} already failed")
        elif new_status == "posted" and self.status == "assigned":
            if self.requeues >= 1:
                raise StateError(f"task {self.task_id} already requeued once")
            self.requeues += 1
        else:
            order = TaskStatus.ORDER
            if self.status not in order or new_status not in order:
                raise StateError(f"task {self.task_id}: cannot go {self.status} -> {new_status}")
            if order.index(new_status) != order.index(self.status) + 1:
                raise StateError(f"task {self.task_id}: cannot go {self.status} -> {new_status}")
        self.status = new_status
        self.history.append((new_status, now))

    def last_time(self, status: str) -> float:
        for s, t in reversed(self.history):
            if s == status:
                return t
        raise KeyError(f"task {self.task_id} never reached status {status!r}")

    def queue_delay(self) -> float:
        """(assignment - post) + (validation start - model receipt)."""
        t4 = self.last_time("assigned") - self.history[0][1]
        if self.validation_started_at is not None:
            t4 += self.validation_started_at - self.last_time("trained")
        return t4


@dataclass(frozen=True)
class DelayBreakdown:
    t1: float  # encryptor training
    t2: float  # equivalent per-leg network delay (mean of 4 legs)
    t3: float  # worker compute
    t4: float  # server queue/wait
    t0: float  # total

    @staticmethod
    def from_components(t1: float, legs: tuple[float, float, float, float], t3: float, t4: float) -> "DelayBreakdown":
        for label, v in (("t1", t1), ("t3", t3), ("t4", t4), *((f"leg{i + 1}", l) for i, l in enumerate(legs))):
            if v < 0:
                raise ValueError(f"negative duration {label}={v}")
        if len(legs) != 4:
            raise ValueError(f"need exactly 4 measured legs, got {len(legs)}")
        t2 = sum(legs) / 4.0
        return DelayBreakdown(t1, t2, t3, t4, t1 + 4 * t2 + t3 + t4)

    def to_dict(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "t3": self.t3, "t4": self.t4, "t0": self.t0}


def delay_report(task: TaskRecord, legs: tuple[float, float, float, float], t1: float, t3: float) -> DelayBreakdown:
    """Assemble the decomposition for a finished task; t4 comes from the
    task's own timestamps."""
    return DelayBreakdown.from_components(t1, legs, t3, task.queue_delay())


# ---------------------------------------------------------------------------
# server


class _Task:
    def __init__(self, task_id: int, required_epochs: int, fee: int,
                 train_blob: bytes, val_blob: bytes):
        self.record = TaskRecord(task_id, hashlib.sha256(train_blob).hexdigest(), required_epochs)
        self.fee = fee
        self.train_blob = train_blob
        self.train_digest = hashlib.sha256(train_blob).digest()
        self.val_blob = val_blob
        self.done = threading.Event()
        # set on completion:
        self.accuracy: float | None = None
        self.checkpoint: bytes | None = None
        self.t3 = 0.0
        self.leg2 = 0.0
        self.leg3 = 0.0
        self.error: tuple[int, str] | None = None


class TaskBroker:
    """The intermediary node: matches posted tasks to requesting workers FIFO,
    validates returned models on the held-back split, pays, and returns the
    model to the publisher."""

    def __init__(self, host: str = "127.0.0.1", port: int | None = None, *,
                 fee: int = 10, timeout: float = 120.0, task_timeout: float = 600.0,
                 assign_timeout: float = 30.0, max_payload: int = MAX_PAYLOAD_DEFAULT,
                 tap: Tap | None = None):
        if port is None:
            port = int(os.environ.get(PORT_ENV, "0"))
        self._listen = socket.create_server((host, port))
        self._listen.settimeout(0.2)
        self.timeout = timeout
        self.task_timeout = task_timeout
        self.assign_timeout = assign_timeout
        self.fee = fee
        self.max_payload = max_payload
        self.tap = tap
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._tasks: dict[int, _Task] = {}
        self._queue: queue.Queue[int] = queue.Queue()
        self._next_id = 1
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._listen.getsockname()[:2]
        return host, port

    def start(self) -> "TaskBroker":
        self._accept_thread = threading.Thread(target=self._accept_loop, name="broker-accept", daemon=True)
        self._accept_thread.start()
        return self

    def shutdown(self) -> None:
        self._stop.set()
        if self._accept_thread:
            self._accept_thread.join(timeout=5)
        self._listen.close()
        for t in self._threads:
            t.join(timeout=5)

    def task_record(self, task_id: int) -> TaskRecord:
        with self._lock:
            return self._tasks[task_id].record

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _addr = self._listen.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(self.timeout)
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket):
        # per-connection failures stay on this connection
        try:
            with conn:
                msg, recv_leg = recv_message(conn, self.tap, self.max_payload)
                if msg.type == MessageType.POST_DATASET:
                    self._serve_publisher(conn, msg, recv_leg)
                elif msg.type == MessageType.REQUEST_TASK:
                    self._serve_worker(conn)
                else:
                    send_message(conn, pack_error(0, ERR_GENERIC, f"unexpected opening message {msg.type.name}"),
                                 self.tap, self.max_payload)
        except ProtocolError:
            pass
        except OSError:
            pass

    def _serve_publisher(self, conn: socket.socket, msg: Message, recv_leg: float):
        epochs, fee, train_digest, val_digest, train_blob, val_blob = unpack_post_dataset(msg.payload)
        if hashlib.sha256(train_blob).digest() != train_digest or hashlib.sha256(val_blob).digest() != val_digest:
            send_message(conn, pack_error(0, ERR_DIGEST, "posted dataset digest mismatch"), self.tap, self.max_payload)
            return
        try:
            encrypted_from_bytes(val_blob)  # reject malformed datasets before queueing
            encrypted_from_bytes(train_blob)
        except ValueError as e:
            send_message(conn, pack_error(0, ERR_GENERIC, f"malformed dataset: {e}"), self.tap, self.max_payload)
            return
        with self._lock:
            task_id = self._next_id
            self._next_id += 1
            task = _Task(task_id, epochs, fee or self.fee, train_blob, val_blob)
            self._tasks[task_id] = task
        self._queue.put(task_id)

        if not task.done.wait(self.task_timeout):
            task.error = (ERR_TASK_FAILED, "task timed out")
            with self._lock:
                task.record.transition(TaskStatus.FAILED)
        if task.error is not None:
            send_message(conn, pack_error(task_id, *task.error), self.tap, self.max_payload)
            return
        send_message(
            conn,
            pack_validation_result(task_id, task.accuracy, task.t3, task.leg2, task.leg3, task.record.queue_delay()),
            self.tap, self.max_payload,
        )
        send_message(conn, pack_model_return(task_id, task.t3, task.leg2, task.checkpoint), self.tap, self.max_payload)
        with self._lock:
            task.record.transition("returned")

    def _serve_worker(self, conn: socket.socket):
        try:
            task_id = self._queue.get(timeout=self.assign_timeout)
        except queue.Empty:
            send_message(conn, pack_error(0, ERR_NO_TASK, "no task available"), self.tap, self.max_payload)
            return
        task = self._tasks[task_id]
        with self._lock:
            task.record.transition("assigned")
        try:
            send_message(conn, pack_task_announce(task_id, task.record.required_epochs, task.train_digest),
                         self.tap, self.max_payload)
            send_message(conn, pack_dataset_transfer(task_id, task.train_blob), self.tap, self.max_payload)
            reply, leg3 = recv_message(conn, self.tap, self.max_payload)
        except (ProtocolError, OSError) as e:
            self._requeue_or_fail(task, f"worker connection lost: {e}")
            return

        if reply.type == MessageType.ERROR:
            _tid, _code, text = unpack_error(reply.payload)
            self._requeue_or_fail(task, f"worker rejected task: {text}")
            return
        if reply.type != MessageType.MODEL_RETURN:
            self._requeue_or_fail(task, f"unexpected worker message {reply.type.name}")
            return

        _tid, t3, leg2, checkpoint = unpack_model_return(reply.payload)
        with self._lock:
            task.record.transition("trained")
        task.record.validation_started_at = time.time()
        try:
            model = classifier_from_bytes(checkpoint)
            val_data = encrypted_from_bytes(task.val_blob)
            accuracy = evaluate_accuracy(model, val_data)
        except (ValueError, T.ShapeError) as e:
            task.error = (ERR_BAD_CHECKPOINT, f"model validation failed: {e}")
            with self._lock:
                task.record.transition(TaskStatus.FAILED)
            send_message(conn, pack_error(task_id, ERR_BAD_CHECKPOINT, "checkpoint rejected"),
                         self.tap, self.max_payload)
            task.done.set()
            return
        with self._lock:
            task.record.transition("validated")
        task.accuracy = accuracy
        task.checkpoint = checkpoint
        task.t3 = t3
        task.leg2 = leg2
        task.leg3 = leg3
        try:
            send_message(conn, pack_payment_ack(task_id, task.fee), self.tap, self.max_payload)
        except (ProtocolError, OSError):
            pass  # payment receipt is the worker's problem; the model is valid
        with self._lock:
            task.record.transition("paid")
        task.done.set()

    def _requeue_or_fail(self, task: _Task, reason: str):
        with self._lock:
            if task.record.requeues < 1:
                task.record.transition("posted")
                self._queue.put(task.record.task_id)
                return
            task.error = (ERR_TASK_FAILED, f"{reason} (after requeue)")
            task.record.transition(TaskStatus.FAILED)
        task.done.set()


def run_server(host: str = "127.0.0.1", port: int | None = None, **kwargs) -> TaskBroker:
    """Start a broker and return it; call .shutdown() to stop serving."""
    return TaskBroker(host, port, **kwargs).start()


# ---------------------------------------------------------------------------
# worker


@dataclass
class WorkerResult:
    task_id: int
    t3: float
    payment: int
    accuracy_curve: list[float]


def run_worker(
    server_addr: tuple[str, int],
    classifier_cfg: ClassifierConfig | None = None,
    epochs: int = 5,
    seed: int = 0,
    *,
    lr: float = 1e-3,
    timeout: float = 600.0,
    max_payload: int = MAX_PAYLOAD_DEFAULT,
    tap: Tap | None = None,
    abort_mid_task: bool = False,
) -> WorkerResult | None:
    """Serve exactly one task: request, train on the encrypted train split,
    return the serialized model, collect payment.

    ``abort_mid_task`` simulates a crash between dataset receipt and model
    return (the connection simply dies). Returns None in that case.
    """
    with socket.create_connection(server_addr, timeout=timeout) as sock:
        sock.settimeout(timeout)
        send_message(sock, Message(MessageType.REQUEST_TASK, b""), tap, max_payload)
        msg, _ = recv_message(sock, tap, max_payload)
        if msg.type == MessageType.ERROR:
            _tid, code, text = unpack_error(msg.payload)
            raise TaskFailedError(f"server refused task request: {text}")
        task_id, required_epochs, digest = unpack_task_announce(msg.payload)
        msg, leg2 = recv_message(sock, tap, max_payload)
        _tid, blob = unpack_dataset_transfer(msg.payload)
        if hashlib.sha256(blob).digest() != digest:
            raise IntegrityError("dataset transfer digest mismatch")

        if abort_mid_task:
            return None

        data = encrypted_from_bytes(blob, name=f"task{task_id}")
        if classifier_cfg is not None and tuple(classifier_cfg.input_shape) != data.sample_shape:
            send_message(sock, pack_error(task_id, ERR_SHAPE,
                                          f"classifier input {classifier_cfg.input_shape} does not match "
                                          f"dataset samples {data.sample_shape}"), tap, max_payload)
            raise T.ShapeError(
                f"classifier input {classifier_cfg.input_shape} does not match dataset samples {data.sample_shape}"
            )
        # the worker's training recipe is its own: it carves a private
        # monitoring split out of the data it was given
        local = split(data, "5:1", seed=seed)
        cfg = classifier_cfg or config_for(local)
        started = time.perf_counter()
        model = train_classifier(cfg, local.train(), local.val(), epochs, seed, lr=lr)
        t3 = time.perf_counter() - started

        checkpoint = classifier_to_bytes(model)
        send_message(sock, pack_model_return(task_id, t3, leg2, checkpoint), tap, max_payload)
        msg, _ = recv_message(sock, tap, max_payload)
        if msg.type == MessageType.ERROR:
            _tid, code, text = unpack_error(msg.payload)
            raise TaskFailedError(f"server rejected model: {text}")
        _tid, amount = unpack_payment_ack(msg.payload)
        return WorkerResult(task_id, t3, amount, model.accuracy_curve)


# ---------------------------------------------------------------------------
# publisher


@dataclass
class PublisherResult:
    task_id: int
    model: TrainedClassifier
    server_accuracy: float
    local_accuracy: float
    delay: DelayBreakdown
    net: TrainedArchNet


def run_publisher(
    server_addr: tuple[str, int],
    plain: Dataset,
    archnet_cfg: ArchNetConfig,
    *,
    archnet_epochs: int = 50,
    archnet_lr: float = 1e-3,
    loss_kind: str = "mse",
    required_epochs: int = 5,
    fee: int = 10,
    seed: int = 0,
    batch_size: int = 32,
    timeout: float = 600.0,
    max_payload: int = MAX_PAYLOAD_DEFAULT,
    tap: Tap | None = None,
) -> PublisherResult:
    """Full publisher lifecycle: train the encryptor (t1), post encrypted
    train+val splits, receive the validated model, and re-verify it locally.
    Plain pixels and decoder parameters never leave this function."""
    if plain.n_train is None:
        raise ValueError("publisher dataset needs a train/val split")

    started = time.perf_counter()
    net = build_archnet(archnet_cfg, seed)
    train_identity(net, plain, archnet_epochs, batch_size=batch_size, loss_kind=loss_kind,
                   optimizer=AdamState(lr=archnet_lr))
    t1 = time.perf_counter() - started

    train_blob = encrypted_to_bytes(encrypt_dataset(net, plain.train()))
    val_blob = encrypted_to_bytes(encrypt_dataset(net, plain.val()))

    with socket.create_connection(server_addr, timeout=timeout) as sock:
        sock.settimeout(timeout)
        leg1 = send_message(sock, pack_post_dataset(required_epochs, fee, train_blob, val_blob), tap, max_payload)
        msg, _ = recv_message(sock, tap, max_payload)
        if msg.type == MessageType.ERROR:
            _tid, code, text = unpack_error(msg.payload)
            raise TaskFailedError(text)
        task_id, accuracy, t3, leg2, leg3, t4 = unpack_validation_result(msg.payload)
        msg, leg4 = recv_message(sock, tap, max_payload)
        _tid, _t3, _leg, checkpoint = unpack_model_return(msg.payload)

    model = classifier_from_bytes(checkpoint)
    # verify on the exact bytes that were shipped, so the comparison is
    # against the same float32 data the server validated on
    local_accuracy = evaluate_accuracy(model, encrypted_from_bytes(val_blob))
    delay = DelayBreakdown.from_components(t1, (leg1, leg2, leg3, leg4), t3, t4)
    return PublisherResult(task_id, model, accuracy, local_accuracy, delay, net)
