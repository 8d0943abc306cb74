"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable operation that
sees at least one input with ``requires_grad`` records a node holding its
inputs and a backward rule.  :func:`backward` collects the nodes reachable
from a scalar loss into a :class:`GradTape` ordered by execution and replays
it in reverse, accumulating gradients into leaf tensors.
"""

import contextlib
import itertools
import threading

import numpy as np

from .errors import ContractError, DimensionError

_state = threading.local()
_seq = itertools.count()

DTYPES = {"float32": np.float32, "float64": np.float64}


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float32)


def set_default_dtype(dtype):
    """Set the precision used for newly created tensors ('float32' or 'float64')."""
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ContractError(f"unsupported precision {dtype!r}; expected one of {sorted(DTYPES)}")
        dtype = DTYPES[dtype]
    _state.dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    previous = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


def is_grad_enabled():
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them for differentiation."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Node:
    __slots__ = ("seq", "inputs", "backward_fn", "op")

    def __init__(self, inputs, backward_fn, op):
        self.seq = next(_seq)
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tensor:
    """A dense array of real scalars, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=dtype or _infer_dtype(data))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    # -- basic accessors -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only supported by a python scalar")
        return mul(self, 1.0 / other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_sum(self) * (1.0 / max(self.size, 1))


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return default_dtype()


def _as_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def make_result(data, inputs, backward_fn, op):
    """Wrap ``data`` as an op output, recording a node when differentiation is active.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(tuple(inputs), backward_fn, op)
    return out


def check_same_shape(a, b, what):
    if a.shape != b.shape:
        for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise DimensionError(f"{what}: axis {axis} differs ({x} vs {y})")
        raise DimensionError(f"{what}: rank differs ({a.ndim} vs {b.ndim})")


# -- elementwise arithmetic ---------------------------------------------


def add(a, b):
    if not isinstance(b, Tensor):
        scalar = b
        return make_result(a.data + np.asarray(scalar, a.dtype), (a,), lambda g: (g,), "add_scalar")
    check_same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    if not isinstance(b, Tensor):
        s = np.asarray(b, a.dtype)
        return make_result(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    check_same_shape(a, b, "mul")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def tensor_sum(a):
    def bw(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bw, "sum")


# -- reverse mode ----------------------------------------------------------


class GradTape:
    """The ops reachable from a root tensor, in execution order."""

    def __init__(self, root):
        if root._node is None:
            self.entries = []
            return
        seen = set()
        stack = [root]
        entries = []
        while stack:
            t = stack.pop()
            if t._node is None or id(t) in seen:
                continue
            seen.add(id(t))
            entries.append(t)
            stack.extend(t._node.inputs)
        entries.sort(key=lambda t: t._node.seq)
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def ops(self):
        return [t._node.op for t in self.entries]

    def replay(self, root, seed):
        grads = {id(root): seed}
        for out in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            node = out._node
            in_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    _accumulate_leaf(inp, ig)
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = ig if prev is None else prev + ig


def _accumulate_leaf(t, g):
    g = np.asarray(g, dtype=t.dtype)
    if g.shape != t.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients accumulate across calls; reset them with ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones(loss.shape, dtype=loss.dtype)
    if loss._node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, seed)
        return
    GradTape(loss).replay(loss, seed)
