"""Dense tensors with an explicit reverse-mode tape.

A :class:`Tape` is created per forward pass. Leaves are registered with
:meth:`Tape.leaf`; every primitive applied to a taped tensor appends one
entry holding its parents and a vector-Jacobian closure. :func:`backward`
sweeps the entries in reverse and returns one gradient per leaf.

Tensors that do not belong to a tape are plain constants, so the same
functions serve inference (no tape) and training (tape).
"""

from __future__ import annotations

import builtins
from collections.abc import Callable, Iterable, Mapping, Sequence
from typing import Any

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "TapeError",
    "ShapeError",
    "as_tensor",
    "backward",
    "finite_difference_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "abs",
    "exp",
    "log",
    "sqrt",
    "power",
    "clamp",
    "maximum_scalar",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "slice_",
    "matmul",
]

Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class TapeError(RuntimeError):
    """Raised for misuse of the autodiff tape."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """Immutable dense array, optionally attached to a :class:`Tape`.

    Attributes:
        data: The underlying row-major ``numpy`` array.
        tape: Tape recording operations on this tensor, or ``None`` for a constant.
        node: Index of this tensor's entry on ``tape``.
    """

    __slots__ = ("data", "tape", "node", "name")
    __array_priority__ = 100.0

    def __init__(self, data: Any, tape: Tape | None = None, node: int | None = None,
                 name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node
        self.name = name

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

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the data."""
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        taped = "" if self.tape is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{taped})"

    def __len__(self) -> int:
        return self.shape[0]

    # Operators. Identity hashing is kept (no __eq__) so tensors can key dicts.
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __getitem__(self, index): return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> Tensor:
        return transpose(self)


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Entries are appended as operations execute, so parents always precede
    children and the list is already in topological order.
    """

    def __init__(self):
        self._parents: list[tuple[int | None, ...]] = []
        self._vjps: list[Vjp | None] = []
        self._leaves: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._vjps)

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves)

    def leaf(self, value: Any, name: str | None = None, dtype=None) -> Tensor:
        """Register ``value`` as a differentiable input."""
        arr = np.asarray(value.data if isinstance(value, Tensor) else value)
        if dtype is not None:
            arr = arr.astype(dtype)
        t = Tensor(arr, tape=self, node=len(self._vjps), name=name)
        self._parents.append(())
        self._vjps.append(None)
        self._leaves.append(t)
        return t

    def leaves_from(self, arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        """Register every array of a name-to-array mapping as a leaf."""
        return {k: self.leaf(v, name=k) for k, v in arrays.items()}

    def record(self, value: np.ndarray, parents: Sequence[Tensor], vjp: Vjp) -> Tensor:
        nodes = tuple(p.node if p.tape is self else None for p in parents)
        t = Tensor(value, tape=self, node=len(self._vjps))
        self._parents.append(nodes)
        self._vjps.append(vjp)
        return t

    def backward(self, loss: Tensor) -> Gradients:
        return backward(self, loss)


class Gradients(Mapping):
    """Mapping from leaf tensor (or its name) to its gradient tensor."""

    def __init__(self, leaves: list[Tensor], grads: list[np.ndarray]):
        self._by_id = {id(leaf): (leaf, Tensor(g)) for leaf, g in zip(leaves, grads)}
        self._by_name = {leaf.name: Tensor(g) for leaf, g in zip(leaves, grads)
                         if leaf.name is not None}

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            return self._by_id[id(key)][1]
        return self._by_name[key]

    def __iter__(self):
        return (leaf for leaf, _ in self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def by_name(self) -> dict[str, np.ndarray]:
        """Gradients keyed by leaf name, as raw arrays."""
        return {k: v.data for k, v in self._by_name.items()}


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep from a scalar ``loss`` recorded on ``tape``.

    Every leaf of the tape receives exactly one gradient; leaves the loss
    does not depend on get zeros.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.tape is not tape or loss.node is None:
        raise TapeError("backward: loss was not produced on this tape")

    grads: list[np.ndarray | None] = [None] * len(tape._vjps)
    grads[loss.node] = np.ones(loss.shape, dtype=loss.dtype)
    for i in range(loss.node, -1, -1):
        g = grads[i]
        vjp = tape._vjps[i]
        if g is None or vjp is None:
            continue
        parent_grads = vjp(g)
        for node, pg in zip(tape._parents[i], parent_grads):
            if node is None or pg is None:
                continue
            if grads[node] is None:
                grads[node] = pg
            else:
                grads[node] = grads[node] + pg
        grads[i] = None  # free intermediate memory
    out = []
    for leaf in tape._leaves:
        g = grads[leaf.node]
        if g is None:
            g = np.zeros(leaf.shape, dtype=leaf.dtype)
        out.append(np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape))
    return Gradients(tape._leaves, out)


# ---------------------------------------------------------------------------
# primitive plumbing


def as_tensor(x: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.dtype != like.dtype:
        arr = arr.astype(like.dtype)
    return Tensor(arr)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("operands belong to different tapes")
    return tape


def apply_op(value: np.ndarray, parents: Sequence[Tensor], vjp: Vjp) -> Tensor:
    """Wrap ``value`` as the result of a primitive with the given parents.

    The vjp closure is only retained when at least one parent is taped.
    """
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(value)
    return tape.record(value, parents, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _binary_operands(x, y) -> tuple[Tensor, Tensor]:
    if isinstance(x, Tensor):
        return x, as_tensor(y, like=x)
    y = as_tensor(y)
    return as_tensor(x, like=y), y


# ---------------------------------------------------------------------------
# elementwise


def add(x, y) -> Tensor:
    a, b = _binary_operands(x, y)
    _broadcast_shape("add", a, b)
    return apply_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(x, y) -> Tensor:
    a, b = _binary_operands(x, y)
    _broadcast_shape("sub", a, b)
    return apply_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(x, y) -> Tensor:
    a, b = _binary_operands(x, y)
    _broadcast_shape("mul", a, b)
    return apply_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape),
                               _unbroadcast(g * a.data, b.shape)))


def div(x, y, eps: float | None = None) -> Tensor:
    """Elementwise ``x / y``; with ``eps`` the denominator is ``y + eps``."""
    a, b = _binary_operands(x, y)
    _broadcast_shape("div", a, b)
    den = b.data if eps is None else b.data + eps
    out = a.data / den

    def vjp(g):
        ga = g / den
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return apply_op(out, (a, b), vjp)


def neg(x: Tensor) -> Tensor:
    return apply_op(-x.data, (x,), lambda g: (-g,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return apply_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return apply_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return apply_op(out, (x,), lambda g: (g * 0.5 / out,))


def power(x: Tensor, exponent: float) -> Tensor:
    """``x ** exponent`` for a constant real exponent."""
    out = x.data ** exponent
    return apply_op(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
    out = np.clip(x.data, lo, hi)
    mask = np.ones(x.shape, dtype=bool)
    if lo is not None:
        mask &= x.data >= lo
    if hi is not None:
        mask &= x.data <= hi
    return apply_op(out, (x,), lambda g: (g * mask,))


def maximum_scalar(x: Tensor, lo: float) -> Tensor:
    return clamp(x, lo=lo)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(name: str, axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{name}: axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes("sum", axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def vjp(g):
        return (np.broadcast_to(np.reshape(g, kept), x.shape).copy(),)

    return apply_op(np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes("mean", axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return apply_op(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return apply_op(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat: no tensors given")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                a != b for i, (a, b) in enumerate(zip(t.shape, ts[0].shape)) if i != ax):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {ax}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return apply_op(out, ts, vjp)


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing with a differentiable scatter-back."""
    out = x.data[index]

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return apply_op(np.array(out), (x,), vjp)


def matmul(x, y) -> Tensor:
    """2-D matrix product."""
    a, b = _binary_operands(x, y)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return apply_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Any, eps: float = 1e-5,
                            indices: Iterable[tuple[int, ...]] | None = None) -> float:
    """Max relative error between the taped gradient of ``f`` and central differences.

    The error per coordinate is ``|analytic - numeric| / (|numeric| + 1e-12)``.

    Args:
        f: Function mapping a tensor to a scalar tensor.
        x: Point of evaluation; converted to float64.
        eps: Central-difference step.
        indices: Optional subset of coordinates to probe; all coordinates if omitted.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x0)
    y = f(xt)
    if y.size != 1:
        raise ShapeError(f"finite_difference_check: f must be scalar-valued, got shape {y.shape}")
    if y.tape is tape:
        analytic = backward(tape, y)[xt].data
    else:
        analytic = np.zeros_like(x0)

    coords = list(np.ndindex(x0.shape)) if indices is None else [tuple(i) for i in indices]
    worst = 0.0
    for idx in coords:
        xp = x0.copy()
        xp[idx] += eps
        xm = x0.copy()
        xm[idx] -= eps
        numeric = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2 * eps)
        err = builtins.abs(analytic[idx] - numeric) / (builtins.abs(numeric) + 1e-12)
        worst = max(worst, float(err))
    return worst


