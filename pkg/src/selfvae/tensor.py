"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` when at least one
input requires a gradient. Outside of a tape, operations are plain numpy
evaluations, which is what sampling and evaluation code relies on.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape():
    ...     loss = (x * x).sum()
    ...     grads = backward(loss)
    >>> grads[x]
    array([2., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "as_tensor",
    "exp",
    "log",
    "expm1",
    "sigmoid",
    "tanh",
    "softplus",
    "elu",
    "maximum",
    "clamp",
    "where",
    "concat",
    "logsumexp",
    "log_softmax",
    "matmul",
    "conv2d",
    "conv2d_transpose",
    "global_average_pool",
]

_state = threading.local()


class Tape:
    """Append-only record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.closed = False

    @staticmethod
    def current() -> Tape | None:
        stack = getattr(_state, "stack", None)
        return stack[-1] if stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> int:
        self.nodes.append((out, inputs, rule))
        return len(self.nodes) - 1

    def __enter__(self) -> Tape:
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()
        # outputs point back at the tape, so drop the nodes to free the graph now
        self.nodes.clear()
        self.closed = True

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """An n-dimensional float64 array that may take part in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "tape_id", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.tape_id: int | None = None

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

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return _unary(self, -self.data, lambda g: -g)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # methods mirroring the functional API
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def elu(self):
        return elu(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    tape = Tape.current()
    out = Tensor(data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        out.tape_id = tape.record(out, inputs, rule)
    return out


def _unary(a: Tensor, data: np.ndarray, rule: Callable) -> Tensor:
    return _result(data, (a,), lambda g: (rule(g),))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _binary(a, b, fn, rule_a, rule_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)
    out = fn(a.data, b.data)

    def rule(g):
        return (
            _unbroadcast(rule_a(g), a.shape) if a.requires_grad else None,
            _unbroadcast(rule_b(g), b.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), rule)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, np.multiply, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        np.divide,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)
    take_a = a.data >= b.data
    return _binary(
        a,
        b,
        np.maximum,
        lambda g: g * take_a,
        lambda g: g * ~take_a,
    )


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    return _unary(a, a.data**p, lambda g: g * p * a.data ** (p - 1.0))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def expm1(a: Tensor) -> Tensor:
    out = np.expm1(a.data)
    return _unary(a, out, lambda g: g * (out + 1.0))


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sigmoid(a: Tensor) -> Tensor:
    out = _np_sigmoid(a.data)
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def softplus(a: Tensor) -> Tensor:
    return _unary(a, np.logaddexp(0.0, a.data), lambda g: g * _np_sigmoid(a.data))


def elu(a: Tensor) -> Tensor:
    """ELU with alpha fixed at 1."""
    pos = a.data > 0
    neg = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg)
    return _unary(a, out, lambda g: g * np.where(pos, 1.0, neg + 1.0))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return _unary(a, out, lambda g: g * inside)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def rule(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.shape) if a.requires_grad else None,
            _unbroadcast(np.where(cond, 0.0, g), b.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), rule)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(old))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _unary(a, a.data.transpose(axes), lambda g: g.transpose(inv))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def rule(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return full

    return _unary(a, np.array(out), rule)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"cannot concatenate {t.shape} with {ref} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    edges = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def rule(g):
        return tuple(
            np.take(g, np.arange(edges[i], edges[i + 1]), axis=ax) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _result(out, tensors, rule)


# reductions


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _unary(a, out, lambda g: _expand(g, a.shape, axis, keepdims).copy())


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1)
    return _unary(a, out, lambda g: _expand(g, a.shape, axis, keepdims) / count)


def logsumexp(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    weights = shifted / s
    if not keepdims:
        out = out.squeeze(axis=axis) if axis is not None else out.reshape(())
    return _unary(a, out, lambda g: _expand(g, a.shape, axis, keepdims) * weights)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    return a - logsumexp(a, axis=axis, keepdims=True)


# linear maps


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(out, (a, b), rule)


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    if w.shape[2] == w.shape[3] == 1 and stride == 1 and pad == 0:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    win = _windows(x, w.shape[2], w.shape[3], stride, pad)
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def _conv_weight_grad(x, g, wshape, stride, pad) -> np.ndarray:
    if wshape[2] == wshape[3] == 1 and stride == 1 and pad == 0:
        return np.tensordot(g, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    win = _windows(x, wshape[2], wshape[3], stride, pad)
    return np.einsum("nohw,nchwij->ocij", g, win, optimize=True)


def _conv_input_grad(g, w, xshape, stride, pad) -> np.ndarray:
    n, c, h, wd = xshape
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    if stride == 1 and pad <= kh - 1 and pad <= kw - 1 and kh == kw:
        # full correlation with the flipped, transposed kernel
        flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        out = _conv(g, flipped, 1, kh - 1 - pad)
        if out.shape[2:] == (h, wd):
            return out
    cols = np.tensordot(w, g, axes=([0], [1]))  # C,kh,kw,N,Ho,Wo
    cols = np.ascontiguousarray(cols.transpose(1, 2, 3, 0, 4, 5))  # kh,kw,N,C,Ho,Wo
    out = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``w`` (O,C,kh,kw), zero padded."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d mismatch: input {x.shape}, weight {w.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    out = _conv(x.data, w.data, stride, padding)

    def rule(g):
        gx = _conv_input_grad(g, w.data, x.shape, stride, padding) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, w.shape, stride, padding) if w.requires_grad else None
        return gx, gw

    return _result(out, (x, w), rule)


def conv2d_transpose(
    y: Tensor,
    w: Tensor,
    stride: int = 1,
    padding: int = 0,
    output_size: tuple[int, int] | None = None,
) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``w`` keeps the conv2d layout (O,C,kh,kw): ``y`` has O channels and the
    result has C channels.
    """
    y, w = as_tensor(y), as_tensor(w)
    if y.ndim != 4 or w.ndim != 4 or y.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d_transpose mismatch: input {y.shape}, weight {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if output_size is None:
        output_size = (
            (y.shape[2] - 1) * stride - 2 * padding + kh,
            (y.shape[3] - 1) * stride - 2 * padding + kw,
        )
    xshape = (y.shape[0], w.shape[1], *output_size)
    expect = tuple((s + 2 * padding - k) // stride + 1 for s, k in zip(output_size, (kh, kw)))
    if expect != y.shape[2:]:
        raise ShapeError(f"output_size {output_size} inconsistent with input {y.shape}")
    out = _conv_input_grad(y.data, w.data, xshape, stride, padding)

    def rule(g):
        gy = _conv(g, w.data, stride, padding) if y.requires_grad else None
        gw = _conv_weight_grad(g, y.data, w.shape, stride, padding) if w.requires_grad else None
        return gy, gw

    return _result(out, (y, w), rule)


def global_average_pool(x: Tensor) -> Tensor:
    return mean(x, axis=(2, 3), keepdims=True)


# differentiation


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through the loss's tape.

    Returns a map from every leaf tensor requiring a gradient to its
    gradient; the gradients are also accumulated into ``leaf.grad``.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ContractError("loss was not recorded on a tape")
    if loss.tape.closed:
        raise ContractError("backward must run inside the tape's with-block")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    leaves: dict[int, Tensor] = {}
    for out, inputs, rule in reversed(loss.tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp.tape is not loss.tape:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for key, leaf in leaves.items():
        g = np.array(grads[key], dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


def relative_error(analytic: float, numeric: float, floor: float = 1e-12) -> float:
    """|a - n| / max(|a| + |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
    floor: float = 1e-12,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor. ``coords`` restricts the check to
    the given flat indices. ``floor`` bounds the denominator from below so
    that near-zero gradients are judged by absolute error.
    """
    point = np.array(point, dtype=np.float64)
    x = Tensor(point.copy(), requires_grad=True)
    with Tape():
        out = f(x)
        grads = backward(out) if out.requires_grad else {}
    analytic = grads.get(x, np.zeros_like(point)).ravel()
    flat = point.ravel()
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = f(Tensor(point)).item()
        flat[i] = orig - h
        down = f(Tensor(point)).item()
        flat[i] = orig
        worst = max(worst, relative_error(analytic[i], (up - down) / (2 * h), floor))
    return worst


def grad_check_tensors(
    loss: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    coords: dict[str, Sequence[int]],
    h: float = 1e-5,
    floor: float = 1e-12,
) -> dict[str, float]:
    """Like :func:`grad_check` for tensors captured by ``loss`` (for example a
    model's parameters), perturbed in place. Returns the worst relative error
    per tensor name. ``loss`` must be deterministic (reseed any noise)."""
    for t in tensors.values():
        t.grad = None
    with Tape():
        backward(loss())
    report = {}
    for name, t in tensors.items():
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in coords.get(name, ()):
            orig = flat[i]
            flat[i] = orig + h
            up = loss().item()
            flat[i] = orig - h
            down = loss().item()
            flat[i] = orig
            worst = max(worst, relative_error(analytic[i], (up - down) / (2 * h), floor))
        report[name] = worst
        t.grad = None
    return report
