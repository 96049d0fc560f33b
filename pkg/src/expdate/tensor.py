"""Dense arrays with tape-based reverse-mode differentiation.

A :class:`Tensor` is an immutable wrapper around a row-major numpy buffer.
Operations whose inputs live on a :class:`Tape` are recorded there together
with a backward rule; :func:`backward` replays the tape in reverse order.

Typical use::

    tape = Tape()
    w = tape.watch(Tensor(np.zeros(3)))
    loss = reduce("sum", w * w)
    grads = backward(loss, tape)      # {w: ndarray}
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DomainError",
    "Tensor",
    "Tape",
    "Rng",
    "record",
    "backward",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "tanh",
    "reduce",
    "reshape",
    "transpose",
    "concat",
    "flip",
    "log_softmax",
    "randn",
    "default_dtype",
    "precision",
]


class ShapeError(ValueError):
    """Incompatible tensor shapes."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


_DEFAULT_DTYPE = [np.dtype(np.float32)]


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE[0]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype of tensors built from Python numbers, lists or integer arrays."""
    prev = _DEFAULT_DTYPE[0]
    _DEFAULT_DTYPE[0] = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE[0] = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is None and not isinstance(data, np.ndarray | np.generic):
        dtype = default_dtype()
    arr = np.asarray(data, dtype=dtype, order="C")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(default_dtype())
    return arr


class Tensor:
    """An n-dimensional float array that may participate in a tape."""

    __slots__ = ("data", "_tape", "_node", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = _as_array(data, dtype).view()
        arr.flags.writeable = False
        self.data = arr
        self._tape: Tape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def on_tape(self) -> bool:
        return self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self._node}" if self._tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("inputs", "backward", "tensor")

    def __init__(self, inputs, backward, tensor=None):
        self.inputs = inputs
        self.backward = backward
        self.tensor = tensor


class Tape:
    """Append-only record of differentiable operations.

    Leaves enter through :meth:`watch`; every op with at least one watched
    ancestor appends a node. Single writer: do not record from two threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> Tensor:
        if tensor._tape is self:
            return tensor
        if tensor._tape is not None:
            raise ValueError("tensor is already recorded on another tape")
        tensor._tape = self
        tensor._node = len(self.nodes)
        self.nodes.append(_Node((), None, tensor))
        self._leaves.append(tensor)
        return tensor

    def watch_all(self, tensors: Iterable[Tensor]) -> None:
        for t in tensors:
            self.watch(t)

    def release(self) -> None:
        """Detach every watched leaf so the tensors can join a fresh tape."""
        for t in self._leaves:
            if t._tape is self:
                t._tape = None
                t._node = None
        self._leaves = []

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves)


def _tape_of(inputs: Sequence) -> Tape | None:
    tape = None
    for x in inputs:
        if isinstance(x, Tensor) and x._tape is not None:
            if tape is None:
                tape = x._tape
            elif x._tape is not tape:
                raise ValueError("inputs are recorded on different tapes")
    return tape


def record(out: np.ndarray, inputs: Sequence, backward_fn: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and record ``backward_fn`` if any input is on a tape.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per input.
    """
    result = Tensor(out)
    tape = _tape_of(inputs)
    if tape is not None:
        handles = tuple(x._node if isinstance(x, Tensor) and x._tape is tape else None for x in inputs)
        result._tape = tape
        result._node = len(tape.nodes)
        tape.nodes.append(_Node(handles, backward_fn))
    return result


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` for every tensor watched on ``tape``.

    Watched tensors that ``loss`` does not depend on map to zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if loss._tape is not tape or loss._node is None:
        raise ValueError("loss is not recorded on this tape")
    pending: dict[int, np.ndarray] = {loss._node: np.ones(loss.shape, dtype=loss.dtype)}
    found: dict[int, np.ndarray] = {}
    for idx in range(loss._node, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.backward is None:
            found[idx] = g
            continue
        in_grads = node.backward(g)
        for handle, ig in zip(node.inputs, in_grads):
            if handle is None or ig is None:
                continue
            prev = pending.get(handle)
            pending[handle] = ig if prev is None else prev + ig
    grads = {}
    for leaf in tape._leaves:
        g = found.get(leaf._node)
        grads[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    return grads


# ---------------------------------------------------------------- helpers


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or default_dtype()))


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Equal shapes, a 0-d operand, or trailing singleton axes only."""
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) == len(b):
        for big, small in ((a, b), (b, a)):
            k = 0
            while k < len(big) and big[k] == small[k]:
                k += 1
            if all(s == 1 for s in small[k:]):
                return big
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# ------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        return g @ bd.T, ad.T @ g

    return record(ad @ bd, (a, b), grad)


# ---------------------------------------------------------------- elementwise


def _binary(a, b, fwd, bwd):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    like = a if isinstance(a, Tensor) else b
    a, b = _wrap(a, like), _wrap(b, like)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = fwd(ad, bd)

    def grad(g):
        ga, gb = bwd(g, ad, bd)
        return (_unbroadcast(ga, ad.shape) if ga is not None else None,
                _unbroadcast(gb, bd.shape) if gb is not None else None)

    return record(out, (a, b), grad)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: (g, g))


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: (g, -g))


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: (g * y, g * x))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of nonpositive input")
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return record(out, (a,), lambda g: (g * (out > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-softplus(-x)) stays finite for large |x|
    return np.exp(-np.logaddexp(0, -x)).astype(x.dtype)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1 - out * out),))


_UNARY = {"exp": exp, "log": log, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch a pointwise op by name."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} takes one operand")
        return _UNARY[op](_wrap(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# ----------------------------------------------------------------- reductions


def _check_axis(a: Tensor, axis):
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    return axis % a.ndim


def reduce(op: str, a: Tensor, axis: int | None = None) -> Tensor:
    """Sum, mean or max over one axis, or over all elements when ``axis`` is None."""
    axis = _check_axis(a, axis)
    ad = a.data
    shape = ad.shape
    if op == "sum":
        out = ad.sum(axis=axis)

        def grad(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

    elif op == "mean":
        n = ad.size if axis is None else shape[axis]
        out = ad.mean(axis=axis)

        def grad(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, shape).astype(ad.dtype),)

    elif op == "max":
        if ad.size == 0:
            raise ShapeError("max of an empty tensor")
        if axis is None:
            flat = int(np.argmax(ad))
            out = ad.reshape(-1)[flat]

            def grad(g):
                d = np.zeros(ad.size, dtype=ad.dtype)
                d[flat] = g
                return (d.reshape(shape),)
        else:
            idx = np.expand_dims(np.argmax(ad, axis=axis), axis)
            out = np.take_along_axis(ad, idx, axis).squeeze(axis)

            def grad(g):
                d = np.zeros_like(ad)
                np.put_along_axis(d, idx, np.expand_dims(g, axis), axis)
                return (d,)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return record(np.asarray(out, dtype=ad.dtype), (a,), grad)


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return record(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, tensors, grad)


def flip(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis)
    return record(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def _getitem(a: Tensor, index) -> Tensor:
    ad = a.data
    out = np.array(ad[index])

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def grad(g):
        d = np.zeros_like(ad)
        if basic:
            d[index] = g
        else:
            np.add.at(d, index, g)
        return (d,)

    return record(out, (a,), grad)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(a, axis)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def grad(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return record(out.astype(x.dtype), (a,), grad)


# ------------------------------------------------------------------------ rng


def _shape(shape) -> tuple[int, ...]:
    return (int(shape),) if np.isscalar(shape) else tuple(int(v) for v in shape)


class Rng:
    """Counter-based (Philox) random stream.

    ``Rng(seed).derive(i)`` gives an independent stream keyed by ``(seed, i)``,
    so per-sample streams do not depend on generation order.
    """

    def __init__(self, seed: int = 0, _key: tuple[int, ...] | None = None):
        self.seed = int(seed) % 2**64
        self.key = _key if _key is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(list(self.key))))

    def derive(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(int(k) % 2**64 for k in keys))

    def normal(self, shape, dtype=None) -> np.ndarray:
        return self._gen.standard_normal(_shape(shape), dtype=np.dtype(dtype or default_dtype()))

    def uniform(self, low: float, high: float, shape, dtype=None) -> np.ndarray:
        return self._gen.uniform(low, high, _shape(shape)).astype(dtype or default_dtype())

    def random(self, shape) -> np.ndarray:
        return self._gen.random(_shape(shape))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "key": list(self.key),
            "counter": [int(v) for v in st["state"]["counter"]],
            "philox_key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        key = tuple(state["key"])
        rng = cls(key[0], key)
        bg = rng._gen.bit_generator
        bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["philox_key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        return rng


def randn(rng: Rng, shape, dtype=None) -> Tensor:
    """Tensor of i.i.d. standard-normal draws."""
    return Tensor(rng.normal(shape, dtype))
