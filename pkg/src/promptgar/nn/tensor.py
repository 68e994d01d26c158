"""Float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation computes its output with numpy, then records a
node (op name, inputs, saved context) that links the output to its inputs.
Backward rules live in the module-level ``RULES`` registry and are looked up by
op name when the tape is replayed, so a rule can be swapped out (the gradcheck
negative control does exactly that).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "RULES",
    "backward",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "index",
    "take",
    "expand",
    "exp",
    "log",
    "gelu",
    "softmax",
    "layer_norm",
    "cross_entropy",
    "masked_mean",
]

LN_EPS = 1e-5

_seq = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Operand extents are incompatible for the requested op."""


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Node:
    __slots__ = ("op", "inputs", "ctx", "seq", "consumed")

    def __init__(self, op: str, inputs: tuple, ctx):
        self.op = op
        self.inputs = inputs
        self.ctx = ctx
        self.seq = next(_seq)
        self.consumed = False


class Tensor:
    """Dense row-major float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "retains_grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name
        self.retains_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of this intermediate after backward."""
        self.retains_grad = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], ctx=None) -> Tensor:
    # NaN/Inf anywhere makes the reduction non-finite; one pass, no temporaries.
    if out.size and not np.isfinite(np.add.reduce(out, axis=None)):
        if not np.isfinite(out).all():
            raise FloatingPointError(f"{op}: non-finite values in output of shape {out.shape}")
    t = Tensor(out)
    if grad_enabled() and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        t.node = Node(op, tuple(inputs), ctx)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# backward rules: rule(ctx, inputs, out_grad) -> tuple of input grads (None to skip)

RULES: dict[str, Callable] = {}


def rule(name: str):
    def deco(fn):
        RULES[name] = fn
        return fn

    return deco


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)
    return _record("add", a.data + b.data, (a, b))


@rule("add")
def _add_rule(ctx, inputs, g):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)
    return _record("sub", a.data - b.data, (a, b))


@rule("sub")
def _sub_rule(ctx, inputs, g):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.data, b.data)
    return _record("mul", a.data * b.data, (a, b))


@rule("mul")
def _mul_rule(ctx, inputs, g):
    a, b = inputs
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.data, b.data)
    return _record("div", a.data / b.data, (a, b))


@rule("div")
def _div_rule(ctx, inputs, g):
    a, b = inputs
    ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
    return ga, gb


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,))


@rule("neg")
def _neg_rule(ctx, inputs, g):
    return (-g,)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _record("exp", out, (a,), out)


@rule("exp")
def _exp_rule(out, inputs, g):
    return (g * out,)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise FloatingPointError("log: non-positive input")
    return _record("log", np.log(a.data), (a,))


@rule("log")
def _log_rule(ctx, inputs, g):
    return (g / inputs[0].data,)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(u)
    return _record("gelu", 0.5 * x * (1.0 + th), (a,), th)


@rule("gelu")
def _gelu_rule(th, inputs, g):
    x = inputs[0].data
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)


# linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: batch extents differ, {a.shape} vs {b.shape}") from None
    return _record("matmul", out, (a, b))


@rule("matmul")
def _matmul_rule(ctx, inputs, g):
    a, b = inputs
    ga = gb = None
    if a.requires_grad:
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
    if b.requires_grad:
        if b.ndim == 2:
            # shared weight: fold batch axes into rows instead of a batched product
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
    return ga, gb


# reductions & shape ------------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return _record("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), (axis, keepdims))


@rule("sum")
def _sum_rule(ctx, inputs, g):
    axis, keepdims = ctx
    shape = inputs[0].shape
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return _record("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), (axis, keepdims, n))


@rule("mean")
def _mean_rule(ctx, inputs, g):
    axis, keepdims, n = ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, inputs[0].shape).copy(),)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _record("reshape", out, (a,))


@rule("reshape")
def _reshape_rule(ctx, inputs, g):
    return (g.reshape(inputs[0].shape),)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    return _record("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), axes)


@rule("transpose")
def _transpose_rule(axes, inputs, g):
    return (g.transpose(np.argsort(axes)),)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = [t.shape[axis] for t in ts]
    return _record("concat", out, tuple(ts), (axis, sizes))


@rule("concat")
def _concat_rule(ctx, inputs, g):
    axis, sizes = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def index(a, key) -> Tensor:
    a = as_tensor(a)
    return _record("index", np.array(a.data[key]), (a,), key)


def _is_basic(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice)) for k in keys)


@rule("index")
def _index_rule(key, inputs, g):
    out = np.zeros(inputs[0].shape)
    if _is_basic(key):
        out[key] = g
    else:
        np.add.at(out, key, g)
    return (out,)


def take(a, idx, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis`` (embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    return _record("take", np.take(a.data, idx, axis=axis), (a,), (idx, axis))


@rule("take")
def _take_rule(ctx, inputs, g):
    idx, axis = ctx
    a = inputs[0]
    out = np.zeros(a.shape)
    moved = np.moveaxis(out, axis, 0)
    gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
    np.add.at(moved, idx, gm)
    return (out,)


def expand(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _record("expand", out, (a,))


@rule("expand")
def _expand_rule(ctx, inputs, g):
    return (_unbroadcast(g, inputs[0].shape),)


# neural-net primitives ---------------------------------------------------


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax; ``mask`` (bool, broadcastable) zeroes excluded entries exactly."""
    a = as_tensor(a)
    x = a.data
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    if mask is None:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
    else:
        mask = np.broadcast_to(mask, x.shape)
        m = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.exp(np.where(mask, x - m, -np.inf))
    s = e.sum(axis=axis, keepdims=True)
    if mask is not None:
        s = np.where(s > 0, s, 1.0)
    y = e / s
    return _record("softmax", y, (a,), (y, axis))


@rule("softmax")
def _softmax_rule(ctx, inputs, g):
    y, axis = ctx
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def layer_norm(a, gain, bias, eps: float = LN_EPS) -> Tensor:
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match last extent {d}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return _record("layer_norm", xhat * gain.data + bias.data, (a, gain, bias), (xhat, inv))


@rule("layer_norm")
def _layer_norm_rule(ctx, inputs, g):
    xhat, inv = ctx
    a, gain, bias = inputs
    gx = gg = gb = None
    if a.requires_grad:
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    if gain.requires_grad:
        gg = (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    if bias.requires_grad:
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
    return gx, gg, gb


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be B×K, got {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for {b} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: label out of range [0, {k})")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    loss = np.mean(lse - x[np.arange(b), labels])
    return _record("cross_entropy", np.asarray(loss), (logits,), (labels, lse))


@rule("cross_entropy")
def _cross_entropy_rule(ctx, inputs, g):
    labels, lse = ctx
    x = inputs[0].data
    b = x.shape[0]
    p = np.exp(x - lse[:, None])
    p[np.arange(b), labels] -= 1.0
    return (g * p / b,)


def masked_mean(a, mask: np.ndarray, axis: int) -> Tensor:
    """Mean over ``axis`` of the entries where ``mask`` is set.

    The sum runs strictly in index order along ``axis`` so that masked-out
    entries (contributing an exact zero) never change the result, bit for bit.
    Slices with no selected entry come out as zeros.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[: axis + 1]:
        raise ShapeError(f"masked_mean: mask {mask.shape} must match leading extents {a.shape[: axis + 1]}")
    w = mask.astype(np.float64).reshape(mask.shape + (1,) * (a.ndim - axis - 1))
    x = np.moveaxis(a.data, axis, 0)
    wm = np.moveaxis(np.broadcast_to(w, a.shape), axis, 0)
    acc = np.zeros(x.shape[1:])
    for i in range(x.shape[0]):
        acc += x[i] * wm[i]
    count = w.sum(axis=axis)
    denom = np.where(count > 0, count, 1.0)
    return _record("masked_mean", acc / denom, (a,), (w, denom, axis))


@rule("masked_mean")
def _masked_mean_rule(ctx, inputs, g):
    w, denom, axis = ctx
    return (np.expand_dims(g / denom, axis) * w,)


# --------------------------------------------------------------------------


class Tape:
    """Execution-ordered record of the ops that produced a loss."""

    def __init__(self, records: list[Tensor]):
        self.records = records

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen[id(t)] = t
            if t.node is not None:
                stack.extend(i for i in t.node.inputs if i.requires_grad)
        ops = [t for t in seen.values() if t.node is not None]
        ops.sort(key=lambda t: t.node.seq)
        leaves = [t for t in seen.values() if t.node is None]
        return cls(leaves + ops)

    def ops(self) -> list[str]:
        return [t.node.op for t in self.records if t.node is not None]

    def run(self, loss: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        for t in reversed(self.records):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t.node
            if node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if t.retains_grad:
                t.grad = g.copy()
            in_grads = RULES[node.op](node.ctx, node.inputs, g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
            node.consumed = True
            # release saved activations; the tape is single-use
            node.ctx = None


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad and reaches ``loss``."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.node is None:
        raise RuntimeError("backward: loss was not produced on a tape (no input requires grad)")
    if loss.node.consumed:
        raise RuntimeError("backward: stale tape, this forward pass was already differentiated")
    Tape.from_loss(loss).run(loss)
