"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy and, when at least one
input requires a gradient and a :class:`Tape` is active, appends a record with
its backward rule to that tape. ``Tape.backward`` replays the records in exact
reverse order of recording.

Precision is a global switch: ``"double"`` (float64) for verification and
gradient checks, ``"single"`` (float32) for training speed.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DegenerateInputError",
    "NumericError",
    "StateError",
    "Parameter",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat",
    "default_dtype",
    "dot",
    "dropout",
    "embedding_lookup",
    "layer_norm",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_finite_check",
    "permute",
    "precision",
    "relu",
    "reshape",
    "scale",
    "set_precision",
    "softmax",
    "sub",
    "tanh",
    "transpose",
    "tensor_sum",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input admits no well-defined result (e.g. a fully masked softmax row)."""


class NumericError(FloatingPointError):
    """A forward value became NaN or infinite."""


class StateError(RuntimeError):
    """An object was used in an invalid lifecycle state."""


_DTYPES = {"double": np.float64, "single": np.float32}
_config = {"precision": "double", "check_finite": True}


def set_precision(mode: str) -> None:
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _config["precision"] = mode


def default_dtype():
    return _DTYPES[_config["precision"]]


@contextmanager
def precision(mode: str):
    old = _config["precision"]
    set_precision(mode)
    try:
        yield
    finally:
        _config["precision"] = old


@contextmanager
def no_finite_check():
    old = _config["check_finite"]
    _config["check_finite"] = False
    try:
        yield
    finally:
        _config["check_finite"] = old


class Tensor:
    """A numpy array plus an optional gradient buffer.

    Tensors created by recorded ops carry ``requires_grad=True`` so that later
    ops keep recording, but only leaves (typically :class:`Parameter`) get
    their ``grad`` populated by ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == default_dtype():
            self.data = data
        else:
            self.data = np.asarray(data, dtype=default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A learnable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def _not_scalar(t: Tensor):
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Computation record
# ---------------------------------------------------------------------------


@dataclass
class OpRecord:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


_active: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives (the computation record).

    Use as a context manager; primitives executed inside the ``with`` block
    are recorded when any of their inputs requires a gradient.
    """

    def __init__(self):
        self.ops: list[OpRecord] = []
        self._outputs: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def record(self, name, output, inputs, rule) -> None:
        self.ops.append(OpRecord(name, inputs, output, rule))
        self._outputs.add(id(output))

    def reset(self) -> None:
        self.ops.clear()
        self._outputs.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise StateError("backward already ran on this tape; call reset() first")
        if loss.size != 1:
            raise DimensionError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise StateError("loss was not produced on this tape")
        self._consumed = True
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            g = pending.pop(id(op.output), None)
            if g is None:
                continue
            for t, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in self._outputs:
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
                elif t.grad is None:
                    t.grad = np.array(gi, dtype=t.data.dtype, copy=True).reshape(t.shape)
                else:
                    t.grad += gi


def backward(loss: Tensor) -> None:
    """Backpropagate from ``loss`` through the innermost active tape."""
    for tape in reversed(_active):
        if id(loss) in tape._outputs:
            tape.backward(loss)
            return
    raise StateError("loss is not on any active tape")


def _emit(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    if _config["check_finite"] and data.size and not math.isfinite(float(np.sum(data))):
        if not np.isfinite(data).all():
            raise NumericError(f"non-finite value produced by {name}")
    track = bool(_active) and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _active[-1].record(name, out, inputs, rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if g.ndim > len(shape):
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _binary("add", np.add, a, b)
    sa, sb = a.shape, b.shape
    return _emit(
        "add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _binary("sub", np.subtract, a, b)
    sa, sb = a.shape, b.shape
    return _emit(
        "sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _binary("mul", np.multiply, a, b)
    ad, bd = a.data, b.data

    def rule(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit("mul", out, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0)
    return _emit("relu", y, (a,), lambda g: (g * (y > 0),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1 - y * y),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate); identity when not training."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return a
    keep = (rng.random(a.shape, dtype=np.float32) >= rate).astype(a.data.dtype) / (1 - rate)
    return _emit("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tensor_sum(a, axis, keepdims), 1.0 / float(n))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equal-shape tensors, returned as a 0-d tensor."""
    if a.shape != b.shape:
        raise DimensionError(f"dot: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit("dot", np.asarray(np.vdot(ad, bd)), (a, b), lambda g: (g * bd, g * ad))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _emit("permute", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError("transpose needs at least 2 dimensions")
    return _emit("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def _getitem(a: Tensor, key) -> Tensor:
    shape, dtype = a.shape, a.data.dtype
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (slice, int)) or k is Ellipsis for k in parts)

    def rule(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _emit("getitem", np.array(a.data[key]), (a,), rule)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-d ``table``; ``ids`` may have any integer shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n})")
    flat = ids.reshape(-1)

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, flat, g.reshape(len(flat), -1))
        return (full,)

    return _emit("embedding_lookup", table.data[ids], (table,), rule)


# ---------------------------------------------------------------------------
# Linear algebra and normalization
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Supports ``[..., m, k] @ [k, n]`` and same-batch ``[..., m, k] @ [..., k, n]``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ≥2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ in {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ in {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    flat = bd.ndim == 2  # one weight matrix: fold leading axes into a single GEMM

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(ad.shape)
            else:
                ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if flat:
                gb = ad.reshape(-1, bd.shape[0]).T @ g.reshape(-1, bd.shape[1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:]) if flat else ad @ bd
    return _emit("matmul", out, (a, b), rule)


def layer_norm(
    x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5
) -> Tensor:
    """Normalize over the last axis; a constant row normalizes to exactly zero."""
    xd = x.data
    # shifting by the first entry makes constant rows centre to exactly zero
    first = xd[..., :1]
    xc = xd - first
    xc -= xc.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    out = xhat if gamma is None else xhat * gd
    if beta is not None:
        out = out + beta.data
    inputs = tuple(t for t in (x, gamma, beta) if t is not None)

    def rule(g):
        dxhat = g if gd is None else g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [dx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _emit("layer_norm", out, inputs, rule)


def _mask_array(mask, shape) -> np.ndarray:
    m = mask.data != 0 if isinstance(mask, Tensor) else np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(m.shape, shape)
    except ValueError:
        raise DimensionError(f"mask shape {m.shape} does not broadcast to {shape}") from None
    return m


def softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Max-stabilized softmax; masked-out positions get exactly zero weight."""
    if mask is not None:
        m = _mask_array(mask, x.shape)
        # checking the unbroadcast mask is equivalent and far cheaper
        if not m.any(axis=axis).all():
            raise DegenerateInputError("softmax row has no unmasked position")
        y = x.data + np.where(m, 0, -np.inf).astype(x.data.dtype)
    else:
        y = x.data.copy()
    y -= y.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    return _emit(
        "softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Log-softmax through a stabilized log-sum-exp."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _emit("log_softmax", out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))
