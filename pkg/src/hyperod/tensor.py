"""Small reverse-mode autodiff engine on top of numpy.

Every differentiable op creates a :class:`Tensor` and, while a :class:`Tape`
is active, appends it to the tape. Because nodes are appended in creation
order the tape is already topologically sorted, so :func:`backward` is a
single reverse sweep.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or getattr(data, "dtype", None) or DEFAULT_DTYPE)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def swapaxes_last(self):
        return transpose_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=getattr(data, "dtype", DEFAULT_DTYPE)), requires_grad=True, name=name)


class Tape:
    """Records differentiable ops for one step; use as a context manager."""

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def release(self):
        for node in self.nodes:
            node.parents = ()
            node.backward_fn = None
        self.nodes = []


def _current_tape() -> Tape | None:
    return Tape._active[-1] if Tape._active else None


@contextlib.contextmanager
def no_tape():
    """Run ops without recording (forward-only evaluation)."""
    saved = Tape._active[:]
    Tape._active.clear()
    try:
        yield
    finally:
        Tape._active.extend(saved)


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    tape = _current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        tape.nodes.append(out)
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(out):
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def add_bias(x, bias) -> Tensor:
    """Add a bias vector along the last axis of ``x``."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape[-1] != x.shape[-1]:
        raise DimensionError(f"add_bias_broadcast: shapes {x.shape} and {bias.shape}")
    return add(x, bias)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(out):
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, -_unbroadcast(out.grad, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")

    def bw(out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "hadamard", bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(out):
        _accumulate(x, out.grad * (1.0 - y * y))

    return _make(y, (x,), "tanh", bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0

    def bw(out):
        _accumulate(x, out.grad * pos)

    return _make(np.where(pos, x.data, 0.0), (x,), "relu", bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(out):
        _accumulate(x, out.grad * y * (1.0 - y))

    return _make(y, (x,), "sigmoid", bw)


def softplus(x) -> Tensor:
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)

    def bw(out):
        _accumulate(x, out.grad * 0.5 * (1.0 + np.tanh(0.5 * x.data)))

    return _make(y, (x,), "softplus", bw)


def square(x) -> Tensor:
    x = as_tensor(x)

    def bw(out):
        _accumulate(x, 2.0 * x.data * out.grad)

    return _make(x.data * x.data, (x,), "square", bw)


# ---------------------------------------------------------------- reductions


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def bw(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum", bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))

    def bw(out):
        g = out.grad / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), "mean", bw)


def sum_sq(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(out):
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, 2.0 * x.data * g)

    return _make(np.sum(x.data * x.data, axis=axis), (x,), "sum_sq", bw)


# ---------------------------------------------------------------- structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(out.grad, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), out.grad), b.shape))

    return _make(y, (a, b), "matmul", bw)


def transpose_last(x) -> Tensor:
    x = as_tensor(x)

    def bw(out):
        _accumulate(x, np.swapaxes(out.grad, -1, -2))

    return _make(np.swapaxes(x.data, -1, -2), (x,), "transpose", bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def bw(out):
        _accumulate(x, out.grad.reshape(x.shape))

    return _make(y, (x,), "reshape", bw)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    key = idx if isinstance(idx, tuple) else (idx,)
    basic = all(k is None or k is Ellipsis or isinstance(k, (int, slice)) for k in key)

    def bw(out):
        g = np.zeros_like(x.data)
        if basic:
            g[idx] = out.grad
        else:
            np.add.at(g, idx, out.grad)
        _accumulate(x, g)

    return _make(np.array(x.data[idx]), (x,), "getitem", bw)


def concat(tensors: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(out):
        for t, g in zip(ts, np.split(out.grad, bounds, axis=axis)):
            _accumulate(t, g)

    return _make(y, ts, "concat", bw)


_ELEMENTWISE = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name; ``elementwise`` takes ``fn='relu'|'sigmoid'|'tanh'``."""
    if kind == "matmul":
        return matmul(*inputs)
    if kind == "add":
        return add(*inputs)
    if kind == "add_bias_broadcast":
        return add_bias(*inputs)
    if kind == "hadamard":
        return mul(*inputs)
    if kind == "mean":
        return mean(*inputs, **kwargs)
    if kind == "sum_sq":
        return sum_sq(*inputs, **kwargs)
    if kind == "concat":
        return concat(inputs, **kwargs)
    if kind == "elementwise":
        return _ELEMENTWISE[kwargs["fn"]](*inputs)
    if kind in _ELEMENTWISE:
        return _ELEMENTWISE[kind](*inputs)
    raise ValueError(f"unknown op kind {kind!r}")


# ---------------------------------------------------------------- backward


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Reverse sweep over ``tape``; returns ``{param: grad}`` for tracked leaves."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    leaves = {}
    for node in tape.nodes:
        for p in node.parents:
            if p.requires_grad and p.backward_fn is None:
                leaves[id(p)] = p
    for p in leaves.values():
        p.grad = None
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node.backward_fn is not None:
            node.backward_fn(node)
    wanted = list(params) if params is not None else list(leaves.values())
    grads = {}
    for p in wanted:
        grads[p] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads


def value_and_grad(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]):
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss, params)
    tape.release()
    return float(loss.data), grads


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps=1e-6,
                      indices: dict | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``indices`` optionally maps a parameter to the flat entries to probe
    (all entries otherwise).
    """
    _, grads = value_and_grad(loss_fn, params)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        analytic = grads[p].reshape(-1)
        probe = range(flat.size) if indices is None or p not in indices else indices[p]
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            with no_tape():
                up = float(loss_fn().data)
            flat[i] = orig - eps
            with no_tape():
                down = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("non-finite loss during finite differences")
            numeric = (up - down) / (2 * eps)
            err = abs(analytic[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Inverted-dropout keep mask scaled by 1/(1-rate)."""
    if rate <= 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)
