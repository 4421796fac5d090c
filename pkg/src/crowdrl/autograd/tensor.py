"""Dense float64 tensors with reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = F.sum(F.square(F.matmul(x, w)))
    tape.backward(loss)

Outside a tape every op is a plain numpy computation, which is what the
inference path uses. Shapes are explicit: the only implicit broadcast is a
1-D bias added along the last axis (``add``); anything else goes through
:func:`broadcast_to`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        # tape that produced this tensor, if it was recorded
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "out", "parents", "vjp")

    def __init__(self, op: str, out: Tensor, parents: tuple[Tensor, ...], vjp: VJP):
        self.op = op
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive ops; backward runs in reverse order once."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []
        self._done = False

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, op: str, out: Tensor, parents: tuple[Tensor, ...], vjp: VJP) -> None:
        if self._done:
            raise TapeError("cannot record onto a tape that has already been differentiated")
        self.nodes.append(_Node(op, out, parents, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self._done:
            raise TapeError("backward already ran on this tape; gradients would accumulate twice")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._done = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent.requires_grad:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _emit(op: str, data: np.ndarray, parents: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    out = Tensor(data)
    tape = Tape.active()
    if tape is not None and any(p.requires_grad or p._tape is tape for p in parents):
        tape.record(op, out, parents, vjp)
        out._tape = tape
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(cond: bool, op: str, *shapes) -> None:
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D or batched 3-D ``a`` with a 2-D or matching 3-D ``b``."""
    A, B = a.data, b.data
    ok = A.ndim in (2, 3) and B.ndim in (2, 3) and A.shape[-1] == B.shape[-2]
    if ok and B.ndim == 3:
        ok = A.ndim == 3 and A.shape[0] == B.shape[0]
    _check(ok, "matmul", A.shape, B.shape)
    out = A @ B

    def vjp(g):
        ga = g @ np.swapaxes(B, -1, -2)
        if B.ndim == 2:
            gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _emit("matmul", out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-D bias matching ``a``'s last axis."""
    A, B = a.data, b.data
    if A.shape == B.shape:
        bias = False
    else:
        _check(B.ndim == 1 and A.ndim >= 1 and A.shape[-1] == B.shape[0], "add", A.shape, B.shape)
        bias = True

    def vjp(g):
        if bias:
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
        return g, g

    return _emit("add", A + B, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "sub", a.shape, b.shape)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    nd = datas[0].ndim
    ax = axis % nd
    for d in datas[1:]:
        _check(d.ndim == nd and all(d.shape[i] == datas[0].shape[i] for i in range(nd) if i != ax),
               "concat", datas[0].shape, d.shape)
    sizes = [d.shape[ax] for d in datas]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return np.split(g, cuts, axis=ax)

    return _emit("concat", np.concatenate(datas, axis=ax), tuple(tensors), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    A = a.data
    try:
        out = A.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {A.shape} as {tuple(shape)}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(A.shape),))


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` (``np.take``); repeated indices accumulate."""
    A = a.data
    idx = np.asarray(indices, dtype=np.intp)
    _check(idx.ndim <= 1, "take", A.shape, idx.shape)
    out = np.take(A, idx, axis=axis)

    def vjp(g):
        ga = np.zeros_like(A)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if idx.ndim else g)
        return (ga,)

    return _emit("take", out, (a,), vjp)


def pick(a: Tensor, indices) -> Tensor:
    """Row-wise gather: ``out[b] = a[b, indices[b]]`` for a 2-D ``a``."""
    A = a.data
    idx = np.asarray(indices, dtype=np.intp)
    _check(A.ndim == 2 and idx.shape == (A.shape[0],), "pick", A.shape, idx.shape)
    rows = np.arange(A.shape[0])

    def vjp(g):
        ga = np.zeros_like(A)
        ga[rows, idx] = g
        return (ga,)

    return _emit("pick", A[rows, idx], (a,), vjp)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly expand size-1 axes; the gradient sums them back."""
    A = a.data
    shape = tuple(shape)
    _check(A.ndim == len(shape) and all(s == t or s == 1 for s, t in zip(A.shape, shape)),
           "broadcast_to", A.shape, shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(A.shape, shape)) if s == 1 and t != 1)

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _emit("broadcast_to", np.broadcast_to(A, shape).copy(), (a,), vjp)


def pairwise_sum(s: Tensor, t: Tensor) -> Tensor:
    """``out[..., i, j] = s[..., i] + t[..., j]``."""
    S, T = s.data, t.data
    _check(S.shape[:-1] == T.shape[:-1], "pairwise_sum", S.shape, T.shape)
    out = S[..., :, None] + T[..., None, :]
    return _emit("pairwise_sum", out, (s, t), lambda g: (g.sum(axis=-1), g.sum(axis=-2)))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    A = a.data
    out = A.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(A, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), A.shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor) -> Tensor:
    A = a.data
    n = A.size
    _check(n > 0, "mean", A.shape)
    return _emit("mean", np.asarray(A.mean()), (a,), lambda g: (np.full_like(A, float(g) / n),))


def square(a: Tensor) -> Tensor:
    A = a.data
    return _emit("square", A * A, (a,), lambda g: (2.0 * A * g,))


def relu(a: Tensor) -> Tensor:
    A = a.data
    mask = A > 0
    return _emit("relu", np.where(mask, A, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    A = a.data
    factor = np.where(A > 0, 1.0, slope)
    return _emit("leaky_relu", A * factor, (a,), lambda g: (g * factor,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    A = a.data
    z = np.exp(A - A.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (a,), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out
