"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive goes through :func:`record`, which computes the
forward value with numpy, registers a backward closure on the active tape and
returns a new :class:`Tensor`.  :meth:`Tensor.backward` walks the tape in
reverse order and accumulates gradients into leaf tensors.
"""
from __future__ import annotations

import builtins
import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward value contains NaN or Inf."""

    def __init__(self, where: str, phase: str = "forward"):
        super().__init__(f"non-finite value in {phase} of {where}")
        self.where = where
        self.phase = phase


class ShapeError(ValueError):
    """Shape contract violation; ``dim`` names the offending dimension."""

    def __init__(self, op: str, dim: str, expected, got):
        super().__init__(f"{op}: dimension {dim} expected {expected}, got {got}")
        self.op = op
        self.dim = dim
        self.expected = expected
        self.got = got


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.check_finite = True
        self.tape: list[_Node] = []


_state = _State()


def default_dtype():
    return _state.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default floating dtype (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    prev = _state.dtype
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _state.check_finite
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


def grad_enabled() -> bool:
    return _state.grad_enabled


# test hook: names of ops whose backward output is deliberately scaled
_corrupted: set[str] = set()


@contextlib.contextmanager
def corrupt_backward(name: str, factor: float = 1.5):
    """Scale the gradients produced by op ``name`` (for testing checkers)."""
    _corrupted.add(name)
    prev = _CORRUPT_FACTOR[0]
    _CORRUPT_FACTOR[0] = factor
    try:
        yield
    finally:
        _corrupted.discard(name)
        _CORRUPT_FACTOR[0] = prev


_CORRUPT_FACTOR = [1.5]


class _Node:
    __slots__ = ("out", "inputs", "backward", "name")

    def __init__(self, out, inputs, backward, name):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.name = name


class Tape:
    """View over the thread's active op record (ops in execution order)."""

    @staticmethod
    def ops() -> list[str]:
        return [n.name for n in _state.tape]

    @staticmethod
    def clear() -> None:
        _state.tape.clear()

    def __len__(self):
        return len(_state.tape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _state.dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._is_leaf = True

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autograd -----------------------------------------------------------
    def backward(self) -> None:
        backward(self)

    # -- operator sugar -----------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.data.dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    if isinstance(b, Tensor):
        return _const(a, b), b
    return Tensor(a), Tensor(b)


def record(name: str, out: np.ndarray, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a forward result and register its backward closure on the tape.

    ``backward_fn`` receives the upstream gradient and returns one gradient
    (or ``None``) per input, each with that input's shape.
    """
    out = np.asarray(out)
    if _state.check_finite and not np.isfinite(out).all():
        raise NonFiniteError(name)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._is_leaf = False
    needs = _state.grad_enabled and any(i.requires_grad for i in inputs)
    t.requires_grad = needs
    if needs:
        _state.tape.append(_Node(t, tuple(inputs), backward_fn, name))
    return t


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    The tape is cleared afterwards, also when an error interrupts the pass.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", "loss", "scalar", loss.shape)
    tape = _state.tape
    try:
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            if node.name in _corrupted:
                in_grads = [None if x is None else x * _CORRUPT_FACTOR[0] for x in in_grads]
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if _state.check_finite and not np.isfinite(gi).all():
                    raise NonFiniteError(node.name, "backward")
                if inp._is_leaf:
                    if inp.grad is None:
                        inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
                    else:
                        inp.grad += gi
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
    finally:
        tape.clear()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (covers per-channel scaling)."""
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", np.maximum(a.data, 0), (a,),
                  lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """|x| with subgradient 0 at x == 0."""
    ad = a.data
    return record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def power(a: Tensor, exponent: float) -> Tensor:
    """x**exponent for a python scalar exponent.

    Where x == 0 the gradient is taken as 0, which keeps fractional exponents
    of non-negative inputs finite.
    """
    ad = a.data
    out = np.power(ad, exponent)

    def bw(g):
        nz = ad != 0
        safe = np.where(nz, ad, 1)
        d = np.where(nz, exponent * np.power(safe, exponent - 1), 0)
        return (g * d,)

    return record("power", out.astype(ad.dtype, copy=False), (a,), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return record("clamp", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


# -- linear algebra and reductions -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul", "ndim", ">= 2", (ad.ndim, bd.ndim))
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", "inner", ad.shape[-1], bd.shape[-2])

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", ad @ bd, (a, b), bw)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kept), shape),)

    return record("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(kept) / count, shape),)

    return record("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        for d in range(t.ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError("concat", f"axis {d}", tensors[0].shape[d], t.shape[d])
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def split(a: Tensor, sizes: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into chunks; ``sizes`` is a chunk count or explicit sizes."""
    axis = axis % a.ndim
    n = a.shape[axis]
    if isinstance(sizes, int):
        if n % sizes:
            raise ShapeError("split", f"axis {axis}", f"multiple of {sizes}", n)
        sizes = [n // sizes] * sizes
    if builtins.sum(sizes) != n:
        raise ShapeError("split", f"axis {axis}", n, builtins.sum(sizes))
    outs = []
    start = 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + size)
        idx = tuple(idx)

        def bw(g, idx=idx):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        outs.append(record("split", a.data[idx], (a,), bw))
        start += size
    return outs


def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (indices may repeat or permute)."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return record("take", np.take(a.data, indices, axis=axis), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (a,), bw)


def leaves(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t._is_leaf]
