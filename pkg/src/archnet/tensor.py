"""Dense float64 tensors with reverse-mode automatic differentiation.

The op vocabulary is deliberately small: 2-d convolution (cross-correlation
semantics, no kernel flip), transposed convolution, fully-connected layers,
ReLU / sigmoid, max pooling, and the three losses used by the rest of the
package. There is no broadcasting; operands must match shapes exactly.

All arithmetic is float64. File formats elsewhere in the package downcast to
float32 at the boundary.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_EPS = 1e-7

# When True, every forward op asserts its output is finite. Enabled by the
# test suite; off by default because the check reads every output element.
check_finite = False

_grad_enabled = True


class ShapeError(ValueError):
    """An operand dimension does not match what the op requires."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. backward called twice)."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN/Inf from finite inputs."""


class no_grad:
    """Context manager that suspends graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class _OpRecord:
    """Backward closure for one op: parents plus a grad -> parent-grads fn."""

    __slots__ = ("parents", "backward_fn", "name", "consumed")

    def __init__(self, parents, backward_fn, name):
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.consumed = False


class Tensor:
    """N-dimensional float64 array, optionally a node in an autodiff graph.

    ``requires_grad`` marks leaf parameters; after ``backward`` their ``grad``
    holds d(loss)/d(param). Intermediate results never retain gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        # np.ascontiguousarray would promote 0-d arrays to 1-d; keep scalars 0-d
        self.data = np.array(data, dtype=np.float64, copy=False, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._ctx: _OpRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _finite_check(name: str, out: np.ndarray) -> None:
    if check_finite and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{name} produced non-finite values")


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    _finite_check(name, data)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._ctx is not None for p in parents):
        out.requires_grad = True
        out._ctx = _OpRecord(tuple(parents), backward_fn, name)
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# layer ops


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-d cross-correlation: x[N,Cin,H,W] * weight[Cout,Cin,kh,kw] + bias."""
    _require(x.ndim == 4, f"conv2d input must be 4-d (N,C,H,W), got {x.ndim}-d")
    _require(weight.ndim == 4, f"conv2d kernel must be 4-d (Cout,Cin,kh,kw), got {weight.ndim}-d")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = weight.shape
    _require(kcin == cin, f"conv2d kernel expects {kcin} input channels, input has {cin}")
    _require(bias.shape == (cout,), f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    _require(kh <= h + 2 * padding, f"conv2d kernel height {kh} exceeds padded input height {h + 2 * padding}")
    _require(kw <= w + 2 * padding, f"conv2d kernel width {kw} exceeds padded input width {w + 2 * padding}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N,Cin,Ho,Wo,kh,kw) . (Cout,Cin,kh,kw) -> (N,Ho,Wo,Cout)
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]

    def backward_fn(grad: np.ndarray):
        db = grad.sum(axis=(0, 2, 3))
        dw = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        # (N,Cout,Ho,Wo) . (Cout,Cin,kh,kw) -> (N,Ho,Wo,Cin,kh,kw), then
        # scatter each kernel tap back onto the padded input (NHWC layout so
        # the strided adds stay contiguous in the channel axis)
        full = np.tensordot(grad, weight.data, axes=(1, 0))
        dxp = np.zeros(xp.shape[0:1] + xp.shape[2:] + (cin,))
        for u in range(kh):
            for v in range(kw):
                dxp[:, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride, :] += full[
                    ..., u, v
                ]
        dx = dxp.transpose(0, 3, 1, 2)
        if padding:
            dx = dx[:, :, padding : padding + h, padding : padding + w]
        return np.ascontiguousarray(dx), dw, db

    return _node(out, (x, weight, bias), backward_fn, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution (adjoint of conv2d): x[N,Cin,H,W] with weight[Cin,Cout,kh,kw].

    Output spatial size is (H-1)*stride + kh; a 2x2 kernel at stride 2 exactly
    doubles the spatial extent.
    """
    _require(x.ndim == 4, f"conv_transpose2d input must be 4-d (N,C,H,W), got {x.ndim}-d")
    _require(weight.ndim == 4, f"conv_transpose2d kernel must be 4-d (Cin,Cout,kh,kw), got {weight.ndim}-d")
    n, cin, h, w = x.shape
    kcin, cout, kh, kw = weight.shape
    _require(kcin == cin, f"conv_transpose2d kernel expects {kcin} input channels, input has {cin}")
    _require(bias.shape == (cout,), f"conv_transpose2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1:
        raise ValueError(f"conv_transpose2d stride must be >= 1, got {stride}")

    ho = (h - 1) * stride + kh
    wo = (w - 1) * stride + kw
    # (N,Cin,H,W) . (Cin,Cout,kh,kw) -> (N,H,W,Cout,kh,kw); each kernel tap
    # scatters onto its strided output positions
    full = np.tensordot(x.data, weight.data, axes=(1, 0))
    out_nhwc = np.zeros((n, ho, wo, cout))
    for u in range(kh):
        for v in range(kw):
            out_nhwc[:, u : u + (h - 1) * stride + 1 : stride, v : v + (w - 1) * stride + 1 : stride, :] += full[
                ..., u, v
            ]
    out = np.ascontiguousarray(out_nhwc.transpose(0, 3, 1, 2)) + bias.data[None, :, None, None]

    def backward_fn(grad: np.ndarray):
        db = grad.sum(axis=(0, 2, 3))
        # gather[n,i,j,o,u,v] = grad[n, o, i*stride+u, j*stride+v]
        grad_nhwc = grad.transpose(0, 2, 3, 1)
        gather = np.empty((n, h, w, cout, kh, kw))
        for u in range(kh):
            for v in range(kw):
                gather[:, :, :, :, u, v] = grad_nhwc[
                    :, u : u + (h - 1) * stride + 1 : stride, v : v + (w - 1) * stride + 1 : stride, :
                ]
        dx = np.ascontiguousarray(
            np.tensordot(gather, weight.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        )
        dw = np.tensordot(x.data, gather, axes=([0, 2, 3], [0, 1, 2]))
        return dx, dw, db

    return _node(out, (x, weight, bias), backward_fn, "conv_transpose2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully-connected layer: out[n,j] = sum_i x[n,i] * weight[j,i] + bias[j]."""
    _require(x.ndim == 2, f"linear input must be 2-d (N,Din), got {x.ndim}-d")
    _require(weight.ndim == 2, f"linear weight must be 2-d (Dout,Din), got {weight.ndim}-d")
    dout, din = weight.shape
    _require(x.shape[1] == din, f"linear weight expects {din} input features, input has {x.shape[1]}")
    _require(bias.shape == (dout,), f"linear bias must have shape ({dout},), got {bias.shape}")

    out = x.data @ weight.data.T + bias.data

    def backward_fn(grad: np.ndarray):
        return grad @ weight.data, grad.T @ x.data, grad.sum(axis=0)

    return _node(out, (x, weight, bias), backward_fn, "linear")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward_fn(grad: np.ndarray):
        return ((x.data > 0) * grad,)

    return _node(out, (x,), backward_fn, "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the output strictly inside (0,1) even where float64 saturates
    np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=out)

    def backward_fn(grad: np.ndarray):
        return (grad * out * (1.0 - out),)

    return _node(out, (x,), backward_fn, "sigmoid")


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Window-max pooling; Hout = floor((H-k)/stride)+1. Ties go to the first element."""
    _require(x.ndim == 4, f"maxpool2d input must be 4-d (N,C,H,W), got {x.ndim}-d")
    n, c, h, w = x.shape
    if k < 1 or stride < 1:
        raise ValueError(f"maxpool2d window and stride must be >= 1, got k={k} stride={stride}")
    _require(k <= h and k <= w, f"maxpool2d window {k} exceeds input spatial size {h}x{w}")

    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward_fn(grad: np.ndarray):
        dx = np.zeros_like(x.data)
        ni, ci, ii, ji = np.indices((n, c, ho, wo))
        rows = ii * stride + arg // k
        cols = ji * stride + arg % k
        np.add.at(dx, (ni, ci, rows, cols), grad)
        return (dx,)

    return _node(out, (x,), backward_fn, "maxpool2d")


def reshape(x: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.data.reshape(shape)

    def backward_fn(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return _node(out, (x,), backward_fn, "reshape")


# ---------------------------------------------------------------------------
# losses (scalar outputs)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _require(pred.shape == target.shape, f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = pred.size
    out = np.asarray((diff * diff).sum() / n)

    def backward_fn(grad: np.ndarray):
        g = grad * 2.0 * diff / n
        return g, -g

    return _node(out, (pred, target), backward_fn, "mse_loss")


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Binary cross entropy averaged over all elements; pred is clamped to
    [BCE_EPS, 1-BCE_EPS] before the logs."""
    _require(pred.shape == target.shape, f"bce_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    n = pred.size
    out = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).sum() / n)

    def backward_fn(grad: np.ndarray):
        dp = grad * (p - t) / (p * (1.0 - p)) / n
        dt = grad * (np.log(1.0 - p) - np.log(p)) / n
        return dp, dt

    return _node(out, (pred, target), backward_fn, "bce_loss")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross entropy of a softmax over logits[N,K] against integer labels[N]."""
    _require(logits.ndim == 2, f"softmax_cross_entropy logits must be 2-d (N,K), got {logits.ndim}-d")
    labels = np.asarray(labels)
    n, k = logits.shape
    _require(labels.shape == (n,), f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): min={labels.min()} max={labels.max()}")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sm = ez / ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    out = np.asarray(-logp[np.arange(n), labels].mean())

    def backward_fn(grad: np.ndarray):
        d = sm.copy()
        d[np.arange(n), labels] -= 1.0
        return (grad * d / n,)

    return _node(out, (logits,), backward_fn, "softmax_cross_entropy")


def softmax(logits: Tensor) -> np.ndarray:
    """Plain softmax probabilities (inference only, no graph)."""
    z = logits.data
    ez = np.exp(z - z.max(axis=1, keepdims=True))
    return ez / ez.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad leaf reachable from a scalar loss.

    Gradients of fan-out nodes accumulate additively. Intermediate node
    gradients are dropped as soon as their parents have consumed them. A
    second backward over the same graph raises GraphError.
    """
    if loss.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._ctx is None:
        raise GraphError("loss is not part of an autodiff graph")
    if loss._ctx.consumed:
        raise GraphError("backward already called on this graph; rebuild the forward pass first")
    loss._ctx.consumed = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for p in node._ctx.parents:
                if id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._ctx.backward_fn(g)
        for parent, pg in zip(node._ctx.parents, parent_grads):
            if pg is None:
                continue
            if not (parent.requires_grad or parent._ctx is not None):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the forward graph on every call and return a scalar.
    Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
    ``entries_per_param`` caps how many elements of each parameter get probed
    (all of them when None).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    if out._ctx is not None:
        backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.zero_grad()

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if entries_per_param is not None and flat.size > entries_per_param:
            indices = rng.choice(flat.size, size=entries_per_param, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            worst = max(worst, err)
    return worst
