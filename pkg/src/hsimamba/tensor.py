"""Dense numpy-backed tensors with reverse-mode differentiation.

Only the operator set needed by the spectral block, the spatial branch and
the classifier is provided. Every op checks its output for NaN/Inf and
raises :class:`NonFiniteError` instead of propagating bad values.

Multiply-accumulate work of the matmul-like ops (``linear``, ``matmul``,
``conv1d``, ``conv2d``) is tallied into any active :func:`count_flops`
context; elementwise ops and reductions are not counted.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor", "NonFiniteError", "FlopCounter", "count_flops", "tensor", "zeros",
    "add", "mul", "matmul", "linear", "conv1d", "conv2d", "layernorm",
    "silu", "tanh", "flip", "mean", "tsum", "reshape", "transpose",
    "broadcast_to", "softmax_cross_entropy", "backward",
]


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class FlopCounter:
    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


_counters: list[FlopCounter] = []


@contextlib.contextmanager
def count_flops() -> Iterator[FlopCounter]:
    """Count multiply-adds of every op run inside the block."""
    counter = FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(op: str, n: int) -> None:
    for c in _counters:
        c.add(op, int(n))


class Tensor:
    """An n-d float array that may take part in a gradient tape.

    ``_parents`` and ``_backward`` are only populated when at least one input
    requires grad; ``_backward`` maps the output gradient to one gradient per
    parent (``None`` for parents that do not need one).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    t = Tensor(out)
    t.op = op
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw, "mul")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def bw(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _make(out, (x,), bw, "silu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), bw, "tanh")


# ------------------------------------------------------------- shape algebra

def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bw, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(out, (x,), bw, "transpose")


def flip(x: Tensor, axis: int = -1) -> Tensor:
    """Reverse ``x`` along ``axis``; its own inverse."""
    out = np.flip(x.data, axis=axis).copy()

    def bw(g):
        return (np.flip(g, axis=axis).copy(),)

    return _make(out, (x,), bw, "flip")


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape).copy()

    def bw(g):
        return (_unbroadcast(g, x.shape),)

    return _make(out, (x,), bw, "broadcast_to")


def mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),)

    return _make(out, (x,), bw, "mean")


def tsum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is None:
            return (np.full(x.shape, g, dtype=x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), bw, "sum")


# ------------------------------------------------------------ linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    _tally("matmul", a.shape[0] * a.shape[1] * b.shape[1])

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for ``x`` of shape [N, Din] and ``w`` of shape [Din, Dout]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: x{x.shape} w{w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear bias shape {b.shape} != ({w.shape[1]},)")
    out = x.data @ w.data + b.data
    _tally("linear", x.shape[0] * w.shape[0] * w.shape[1])

    def bw(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, w, b), bw, "linear")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Dense 1-D convolution, kernel length 3, zero padding 1, stride 1.

    x: [N, C, L], kernel: [Cout, C, 3], bias: [Cout] -> [N, Cout, L].
    """
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and kernel, got {x.shape}, {kernel.shape}")
    n, c, length = x.shape
    co, ci, k = kernel.shape
    if k != 3:
        raise ValueError(f"conv1d kernel length must be 3, got {k}")
    if ci != c:
        raise ValueError(f"conv1d channel mismatch: input {c}, kernel {ci}")
    if bias.shape != (co,):
        raise ValueError(f"conv1d bias shape {bias.shape} != ({co},)")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1)))
    # cols[n, l, c, t] = xp[n, c, l + t]
    cols = np.stack([xp[:, :, t:t + length] for t in range(3)], axis=-1)
    cols = cols.transpose(0, 2, 1, 3).reshape(n * length, c * 3)
    kmat = kernel.data.reshape(co, c * 3)
    out = (cols @ kmat.T).reshape(n, length, co).transpose(0, 2, 1) + bias.data[None, :, None]
    out = np.ascontiguousarray(out)
    _tally("conv1d", n * length * co * c * 3)

    def bw(g):
        gm = g.transpose(0, 2, 1).reshape(n * length, co)
        dk = (gm.T @ cols).reshape(co, c, 3)
        dcols = (gm @ kmat).reshape(n, length, c, 3)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for t in range(3):
            dxp[:, :, t:t + length] += dcols[:, :, :, t].transpose(0, 2, 1)
        return dxp[:, :, 1:-1], dk, g.sum(axis=(0, 2))

    return _make(out, (x, kernel, bias), bw, "conv1d")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Dense 3x3 convolution, zero padding 1, stride 1.

    x: [N, C, H, W], kernel: [Cout, C, 3, 3], bias: [Cout] -> [N, Cout, H, W].
    """
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ValueError(f"conv2d expects [N,C,H,W] and [Co,C,3,3], got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    co, ci = kernel.shape[:2]
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    if bias.shape != (co,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({co},)")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    taps = [(i, j) for i in range(3) for j in range(3)]
    cols = np.stack([xp[:, :, i:i + h, j:j + w] for i, j in taps], axis=-1)  # N,C,H,W,9
    cols = cols.transpose(0, 2, 3, 1, 4).reshape(n * h * w, c * 9)
    kmat = kernel.data.reshape(co, c * 9)
    out = (cols @ kmat.T).reshape(n, h, w, co).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    _tally("conv2d", n * h * w * co * c * 9)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, co)
        dk = (gm.T @ cols).reshape(co, c, 3, 3)
        dcols = (gm @ kmat).reshape(n, h, w, c, 9)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for t, (i, j) in enumerate(taps):
            dxp[:, :, i:i + h, j:j + w] += dcols[..., t].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1], dk, g.sum(axis=(0, 2, 3))

    return _make(out, (x, kernel, bias), bw, "conv2d")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization of x [N, F] followed by a per-feature affine map."""
    if x.ndim != 2:
        raise ValueError(f"layernorm expects [N, F], got {x.shape}")
    f = x.shape[1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ValueError(f"layernorm affine shape mismatch: F={f}, gamma{gamma.shape}, beta{beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(out, (x, gamma, beta), bw, "layernorm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N, K], got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.dtype.kind not in "iu" or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be integers in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    out = np.asarray((lse - z[rows, labels]).mean())

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(out, (logits,), bw, "softmax_cross_entropy")


# ------------------------------------------------------------------ backward

def _tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls (call ``zero_grad`` between steps).
    The recorded graph is released afterwards, so each forward pass supports
    exactly one backward pass.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    if loss._backward is None and loss.op != "leaf":
        raise RuntimeError("graph already released; run a fresh forward pass")
    order = _tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None
