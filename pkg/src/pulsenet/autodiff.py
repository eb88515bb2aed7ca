"""Reverse-mode automatic differentiation on an eager tape.

Every differentiable op computes its value immediately. If any operand is
a :class:`Var`, the op appends a node to that operand's :class:`Tape`
holding a closure for its vector-Jacobian product. Plain ``ndarray``
operands are constants, so ops on constants return plain arrays and cost
nothing extra.

    >>> f = lambda p: sum_(p * p)
    >>> value_and_grad(f)(np.array([1.0, 2.0]))
    (5.0, array([2., 4.]))
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, TapeStateError


@dataclass
class TapeNode:
    op: str
    inputs: tuple  # Var for live inputs, None for constants
    value: np.ndarray
    vjp: Callable | None = None


class Tape:
    """Append-only list of nodes; topological order is insertion order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence, value, vjp=None) -> "Var":
        if self.consumed:
            raise TapeStateError("cannot record on a consumed tape")
        refs = []
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise TapeStateError("operands belong to different tapes")
                refs.append(x)
            else:
                refs.append(None)
        self.nodes.append(TapeNode(op, tuple(refs), value, vjp))
        return Var(self, len(self.nodes) - 1, value)

    def leaf(self, value) -> "Var":
        return self.record("leaf", (), np.asarray(value))

    def constant(self, value) -> "Var":
        return self.record("const", (), np.asarray(value))

    def backward(self, out: "Var", seed=None) -> list:
        """Sweep the tape in reverse and return one cotangent per node.

        Entries are ``None`` for nodes the output does not depend on.
        """
        if self.consumed:
            raise TapeStateError("backward already ran on this tape")
        if out.tape is not self:
            raise TapeStateError("output does not belong to this tape")
        self.consumed = True
        grads: list = [None] * len(self.nodes)
        grads[out.index] = (np.ones_like(out.value) if seed is None
                            else np.asarray(seed, dtype=out.value.dtype))
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if inp is None or gi is None:
                    continue
                j = inp.index
                grads[j] = gi if grads[j] is None else _accumulate(grads[j], gi)
        return grads

    def record_multi(self, op: str, inputs: Sequence, values: tuple, vjp) -> tuple:
        """Record an op with several outputs.

        ``vjp`` receives a tuple with one cotangent per output (``None`` for
        outputs that received no gradient).
        """
        n = len(values)
        parent = self.record(op, inputs, tuple(values), vjp)
        outs = []
        for k, v in enumerate(values):
            def proj(g, k=k):
                cot = [None] * n
                cot[k] = g
                return (tuple(cot),)
            outs.append(self.record(f"{op}[{k}]", (parent,), v, proj))
        return tuple(outs)


def _accumulate(a, b):
    if isinstance(a, tuple):
        return tuple(y if x is None else x if y is None else x + y for x, y in zip(a, b))
    return a + b


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value):
        self.tape = tape
        self.index = index
        self.value = value

    shape = property(lambda self: self.value.shape)
    dtype = property(lambda self: self.value.dtype)
    ndim = property(lambda self: self.value.ndim)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __pow__(self, c): return power(self, c)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _lift(op: str, fn, make_vjp, *args):
    tape = _tape_of(args)
    vals = [value_of(a) for a in args]
    out = fn(*vals)
    if tape is None:
        return out
    return tape.record(op, args, out, make_vjp(out, *vals))


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b):
    return _lift("add", np.add,
                 lambda out, x, y: lambda g: (unbroadcast(g, _shape(x)),
                                              unbroadcast(g, _shape(y))), a, b)


def sub(a, b):
    return _lift("sub", np.subtract,
                 lambda out, x, y: lambda g: (unbroadcast(g, _shape(x)),
                                              unbroadcast(-g, _shape(y))), a, b)


def mul(a, b):
    return _lift("mul", np.multiply,
                 lambda out, x, y: lambda g: (unbroadcast(g * y, _shape(x)),
                                              unbroadcast(g * x, _shape(y))), a, b)


def div(a, b):
    return _lift("div", np.divide,
                 lambda out, x, y: lambda g: (unbroadcast(g / y, _shape(x)),
                                              unbroadcast(-g * out / y, _shape(y))), a, b)


def neg(a):
    return _lift("neg", np.negative, lambda out, x: lambda g: (-g,), a)


def power(a, c: float):
    return _lift("power", lambda x: x ** c,
                 lambda out, x: lambda g: (g * c * x ** (c - 1),), a)


def square(a):
    return _lift("square", np.square, lambda out, x: lambda g: (2 * g * x,), a)


def exp(a):
    return _lift("exp", np.exp, lambda out, x: lambda g: (g * out,), a)


def log(a):
    return _lift("log", np.log, lambda out, x: lambda g: (g / x,), a)


def tanh(a):
    return _lift("tanh", np.tanh, lambda out, x: lambda g: (g * (1 - out * out),), a)


def sigmoid(a):
    def fn(x):
        return 0.5 * (np.tanh(0.5 * x) + 1)
    return _lift("sigmoid", fn, lambda out, x: lambda g: (g * out * (1 - out),), a)


def relu(a):
    return _lift("relu", lambda x: np.maximum(x, 0),
                 lambda out, x: lambda g: (g * (x > 0),), a)


def clip(a, lo, hi):
    """Saturating projection; the gradient is zero outside ``(lo, hi)``."""
    return _lift("clip", lambda x: np.clip(x, lo, hi),
                 lambda out, x: lambda g: (g * ((x > lo) & (x < hi)),), a)


def astype(a, dtype):
    def make(out, x):
        src = x.dtype
        return lambda g: (g.astype(src),)
    return _lift("astype", lambda x: x.astype(dtype), make, a)


# --------------------------------------------------------------------------
# Reductions and shape manipulation
# --------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims=False):
    def make(out, x):
        axes = _norm_axes(axis, x.ndim)
        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, x.shape).copy(),)
        return vjp
    return _lift("sum", lambda x: np.asarray(x.sum(axis=axis, keepdims=keepdims)), make, a)


def mean(a, axis=None, keepdims=False):
    def make(out, x):
        axes = _norm_axes(axis, x.ndim)
        n = int(np.prod([x.shape[i] for i in axes]))
        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return vjp
    return _lift("mean", lambda x: np.asarray(x.mean(axis=axis, keepdims=keepdims)), make, a)


def reshape(a, shape):
    return _lift("reshape", lambda x: x.reshape(shape),
                 lambda out, x: lambda g: (g.reshape(x.shape),), a)


def transpose(a, axes=None):
    def make(out, x):
        inv = np.argsort(axes if axes is not None else range(x.ndim)[::-1])
        return lambda g: (g.transpose(inv),)
    return _lift("transpose", lambda x: x.transpose(axes), make, a)


def getitem(a, idx):
    def make(out, x):
        def vjp(g):
            dx = np.zeros(x.shape, dtype=g.dtype)
            np.add.at(dx, idx, g)
            return (dx,)
        return vjp
    return _lift("getitem", lambda x: x[idx], make, a)


def time_slice(a, start: int, stop: int, axis: int = 1):
    """``a[:, start:stop]`` along ``axis`` with a cheap dense backward."""
    sl = (slice(None),) * axis + (slice(start, stop),)

    def make(out, x):
        def vjp(g):
            dx = np.zeros(x.shape, dtype=g.dtype)
            dx[sl] = g
            return (dx,)
        return vjp
    return _lift("time_slice", lambda x: x[sl], make, a)


def concat(parts: Sequence, axis: int = 0):
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    sizes = [np.shape(value_of(p))[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def make(out, *xs):
        return lambda g: tuple(np.split(g, bounds, axis=axis))
    return _lift("concat", lambda *xs: np.concatenate(xs, axis=axis), make, *parts)


def stack(parts: Sequence, axis: int = 0):
    parts = list(parts)

    def make(out, *xs):
        return lambda g: tuple(np.moveaxis(g, axis, 0))
    return _lift("stack", lambda *xs: np.stack(xs, axis=axis), make, *parts)


def take_along(a, indices, axis=-1):
    """``np.take_along_axis`` differentiable in ``a``."""
    indices = np.asarray(indices)

    def make(out, x):
        def vjp(g):
            dx = np.zeros(x.shape, dtype=g.dtype)
            np.put_along_axis(dx, indices, g, axis=axis)
            return (dx,)
        return vjp
    return _lift("take_along", lambda x: np.take_along_axis(x, indices, axis=axis), make, a)


def log_softmax(a, axis=-1):
    def fn(x):
        m = x.max(axis=axis, keepdims=True)
        z = x - m
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def make(out, x):
        def vjp(g):
            return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
        return vjp
    return _lift("log_softmax", fn, make, a)


# --------------------------------------------------------------------------
# Linear algebra, convolution, pooling
# --------------------------------------------------------------------------

def matmul(a, b):
    def make(out, x, y):
        def vjp(g):
            if y.ndim == 1:
                gx = np.multiply.outer(g, y)
                gy = np.tensordot(x, g, axes=(tuple(range(x.ndim - 1)),
                                              tuple(range(g.ndim))))
                return gx, gy
            gx = np.matmul(g, np.swapaxes(y, -1, -2))
            if y.ndim == 2 and x.ndim > 2:
                x2 = x.reshape(-1, x.shape[-1])
                gy = x2.T @ g.reshape(-1, g.shape[-1])
            else:
                gy = np.matmul(np.swapaxes(x, -1, -2), g)
            return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)
        return vjp
    return _lift("matmul", T.matmul, make, a, b)


def conv2d(x, kernels, stride=1, padding="valid"):
    def make(out, xv, kv):
        return lambda g: (T.conv2d_grad_input(g, kv, xv.shape, stride, padding),
                          T.conv2d_grad_kernels(xv, g, kv.shape, stride, padding))
    return _lift("conv2d", lambda xv, kv: T.conv2d(xv, kv, stride, padding), make, x, kernels)


def maxpool2d(x, window, ceil=True):
    def make(out, xv):
        return lambda g: (T.maxpool2d_backward(xv, g, window, ceil),)
    return _lift("maxpool2d", lambda xv: T.maxpool2d(xv, window, ceil), make, x)


def roll(x, shifts, axes):
    shifts = tuple(np.atleast_1d(shifts).tolist())

    def make(out, xv):
        return lambda g: (T.roll(g, [-s for s in shifts], axes),)
    return _lift("roll", lambda xv: T.roll(xv, shifts, axes), make, x)


# --------------------------------------------------------------------------
# Custom forward/backward pairs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CustomGradient:
    """Elementwise op whose derivative is replaced by ``backward``.

    The cotangent rule is ``g_in = g_out * backward(x)`` evaluated at the
    saved input ``x``.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    backward: Callable[[np.ndarray], np.ndarray]


def register_custom(cg: CustomGradient, name: str = "custom") -> Callable:
    def op(x):
        def fn(xv):
            out = np.asarray(cg.forward(xv))
            if out.shape != np.shape(xv):
                raise ContractError(
                    f"{name}: forward changed shape {np.shape(xv)} -> {out.shape}")
            return out.astype(np.result_type(xv), copy=False)

        def make(out, xv):
            def vjp(g):
                d = np.asarray(cg.backward(xv))
                if d.shape != xv.shape:
                    raise ContractError(
                        f"{name}: backward shape {d.shape} != input shape {xv.shape}")
                return (g * d,)
            return vjp
        return _lift(name, fn, make, x)
    op.__name__ = name
    return op


# --------------------------------------------------------------------------
# Pytrees and value_and_grad
# --------------------------------------------------------------------------

def tree_flatten(tree) -> tuple[list, Callable[[list], Any]]:
    """Flatten nested dicts/lists/tuples into leaves plus a rebuild function."""
    if isinstance(tree, dict):
        keys = list(tree)
        subs = [tree_flatten(tree[k]) for k in keys]
        counts = [len(s[0]) for s in subs]
        leaves = [leaf for s in subs for leaf in s[0]]

        def rebuild(ls):
            out, i = {}, 0
            for k, (_, rb), n in zip(keys, subs, counts):
                out[k] = rb(ls[i:i + n])
                i += n
            return out
        return leaves, rebuild
    if isinstance(tree, (list, tuple)):
        subs = [tree_flatten(t) for t in tree]
        counts = [len(s[0]) for s in subs]
        leaves = [leaf for s in subs for leaf in s[0]]
        kind = type(tree)

        def rebuild(ls):
            out, i = [], 0
            for (_, rb), n in zip(subs, counts):
                out.append(rb(ls[i:i + n]))
                i += n
            return kind(out)
        return leaves, rebuild
    return [tree], lambda ls: ls[0]


def tree_map(fn, tree, *rest):
    leaves, rebuild = tree_flatten(tree)
    others = [tree_flatten(r)[0] for r in rest]
    return rebuild([fn(*xs) for xs in zip(leaves, *others)])


def tree_leaves(tree) -> list:
    return tree_flatten(tree)[0]


def value_and_grad(f: Callable, has_aux: bool = False) -> Callable:
    """Wrap ``f(params, *args)`` so it also returns ``d f / d params``.

    ``f`` must return a scalar (or ``(scalar, aux)`` when ``has_aux``).
    Gradients come back with the same structure and shapes as ``params``;
    parameters the output does not depend on get zeros.
    """

    def wrapped(params, *args, **kwargs):
        leaves, rebuild = tree_flatten(params)
        tape = Tape()
        live = [tape.leaf(np.asarray(p)) for p in leaves]
        result = f(rebuild(live), *args, **kwargs)
        out, aux = result if has_aux else (result, None)
        if np.ndim(value_of(out)) != 0:
            raise ContractError(
                f"value_and_grad needs a scalar output, got shape {np.shape(value_of(out))}")
        if isinstance(out, Var):
            cot = tape.backward(out)
            grads = [np.zeros_like(v.value) if cot[v.index] is None else
                     np.asarray(cot[v.index], dtype=v.value.dtype).reshape(v.shape)
                     for v in live]
        else:
            grads = [np.zeros_like(v.value) for v in live]
        if has_aux:
            aux = tree_map(lambda a: value_of(a), aux)
        value = float(value_of(out))
        grads = rebuild(grads)
        return ((value, aux), grads) if has_aux else (value, grads)

    return wrapped


def grad(f: Callable) -> Callable:
    vg = value_and_grad(f)
    return lambda params, *a, **k: vg(params, *a, **k)[1]
