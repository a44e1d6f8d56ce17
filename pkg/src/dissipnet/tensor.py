"""Dense float64 tensors with a tape-based reverse-mode differentiation engine.

The primitive vocabulary is deliberately small: exactly what the direction
models and the one-step training loss need.

    >>> x = Tensor([1.0, -2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = square_loss(scale(x, 3.0), Tensor([0.0, 0.0]))
    >>> grads = backward(tape, y)
    >>> grads[x]
    array([ 18., -36.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "Node",
    "backward",
    "affine",
    "conv2d_3x3",
    "relu",
    "add",
    "scale",
    "concat",
    "square_loss",
    "record",
]


class ShapeError(ValueError):
    """Raised when a primitive receives inputs of incompatible shapes."""


class Tensor:
    """Immutable n-dimensional array of 64-bit floats.

    ``data`` is a read-only numpy array in row-major order. Leaves created with
    ``requires_grad=True`` receive gradients from :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal: takes ownership of a freshly computed array
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives evaluated inside the block are
    recorded on the innermost active tape. Inputs always precede their
    consumers, so reversing the list is a valid topological order.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE: list[Tape] = []


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    """Wrap ``out`` as a Tensor and record it on the active tape, if any.

    ``vjp(seed)`` must return one cotangent (or None) per input. Layers defined
    outside this module (the cone projection) register themselves this way.
    """
    result = Tensor._wrap(out)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(Node(op, tuple(inputs), result, vjp))
    return result


def _check(cond: bool, op: str, *tensors: Tensor, detail: str = "") -> None:
    if not cond:
        shapes = ", ".join(str(t.shape) for t in tensors)
        msg = f"{op}: incompatible shapes {shapes}"
        raise ShapeError(msg + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------- primitives


def affine(x, W, b) -> Tensor:
    """``x @ W.T + b`` for ``x`` of shape (in,) or (batch, in)."""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    _check(W.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == W.shape[0],
           "affine", x, W, b, detail="W must be (out, in), b must be (out,)")
    _check(x.data.ndim in (1, 2) and x.shape[-1] == W.shape[1], "affine", x, W, b)
    xd, Wd = x.data, W.data
    out = xd @ Wd.T + b.data

    def vjp(s):
        if xd.ndim == 1:
            return s @ Wd, np.outer(s, xd), s
        return s @ Wd, s.T @ xd, s.sum(axis=0)

    return record("affine", (x, W, b), out, vjp)


def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv2d_3x3(x, W, b) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1.

    ``x`` is (N, C_in, H, W) or (C_in, H, W); ``W`` is (C_out, C_in, 3, 3).
    """
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    _check(W.data.ndim == 4 and W.shape[2:] == (3, 3), "conv2d_3x3", x, W, b,
           detail="kernel must be (C_out, C_in, 3, 3)")
    _check(b.data.ndim == 1 and b.shape[0] == W.shape[0], "conv2d_3x3", x, W, b)
    _check(x.data.ndim in (3, 4) and x.shape[-3] == W.shape[1], "conv2d_3x3", x, W, b)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    Wd = W.data
    n, _, h, w = xd.shape
    xp = _pad(xd)
    out = np.zeros((n, Wd.shape[0], h, w))
    for i in range(3):
        for j in range(3):
            # (N, C_in, H, W) x (C_out, C_in) -> (N, H, W, C_out)
            out += np.tensordot(xp[:, :, i:i + h, j:j + w], Wd[:, :, i, j],
                                axes=([1], [1])).transpose(0, 3, 1, 2)
    out += b.data[None, :, None, None]

    def vjp(s):
        s4 = s[None] if squeeze else s
        dxp = np.zeros_like(xp)
        dW = np.zeros_like(Wd)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += np.tensordot(
                    s4, Wd[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                dW[:, :, i, j] = np.tensordot(s4, xp[:, :, i:i + h, j:j + w],
                                              axes=([0, 2, 3], [0, 2, 3]))
        dx = dxp[:, :, 1:-1, 1:-1]
        return (dx[0] if squeeze else dx), dW, s4.sum(axis=(0, 2, 3))

    return record("conv2d_3x3", (x, W, b), out[0] if squeeze else out, vjp)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0.0), lambda s: (s * mask,))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check(a.shape == b.shape, "add", a, b)
    return record("add", (a, b), a.data + b.data, lambda s: (s, s))


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    return record("scale", (x,), c * x.data, lambda s: (c * s,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].data.ndim
    ax = axis % nd if nd else 0
    ok = all(t.data.ndim == nd for t in ts) and all(
        t.shape[:ax] + t.shape[ax + 1:] == ts[0].shape[:ax] + ts[0].shape[ax + 1:]
        for t in ts)
    _check(ok, "concat", *ts)
    out = np.concatenate([t.data for t in ts], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return record("concat", ts, out, lambda s: tuple(np.split(s, cuts, axis=ax)))


def square_loss(y, t) -> Tensor:
    """Sum of squared differences, returned as a 0-d tensor."""
    y, t = _as_tensor(y), _as_tensor(t)
    _check(y.shape == t.shape, "square_loss", y, t)
    r = y.data - t.data
    return record("square_loss", (y, t), np.array(np.dot(r.ravel(), r.ravel())),
                  lambda s: (2.0 * s * r, -2.0 * s * r))


# ------------------------------------------------------------------ backward


def backward(tape: Tape, output: Tensor, seed=None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` starting from ``output``.

    Returns ``d(<seed, output>)/d(leaf)`` for every leaf with
    ``requires_grad``. Leaves that do not influence ``output`` get zeros.
    """
    if not tape.nodes:
        raise RuntimeError("backward called on an empty tape; run a forward pass first")
    producers = {id(node.output): k for k, node in enumerate(tape.nodes)}
    if id(output) not in producers:
        raise RuntimeError("output tensor was not produced on this tape")
    seed = np.ones(output.shape) if seed is None else np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} != output shape {output.shape}")

    cot: dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(tape.nodes[: producers[id(output)] + 1]):
        s = cot.pop(id(node.output), None)
        if s is None:
            continue
        for inp, g in zip(node.inputs, node.vjp(s)):
            if g is None:
                continue
            key = id(inp)
            if key not in producers and not inp.requires_grad:
                continue
            cot[key] = cot[key] + g if key in cot else np.array(g, dtype=np.float64)

    grads = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in grads:
                grads[id(inp)] = inp
    return {t: cot.get(k, np.zeros(t.shape)).reshape(t.shape) for k, t in grads.items()}
