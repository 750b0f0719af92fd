"""Tape-based reverse-mode autodiff over dense float64 arrays.

Feature maps are plain 2-D/3-D numpy arrays wrapped in :class:`Tensor`.
Every operation the upsampling network needs is a free function that
computes eagerly and, while a :class:`Tape` is active, records a backward
closure. There is no broadcasting beyond the bias add in :func:`linear`;
all shape interactions are explicit and validated so the whole surface
stays checkable by finite differences.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "backward",
    "from_op",
    "accumulate",
    "linear",
    "relu",
    "add",
    "sub",
    "mul",
    "concat_channels",
    "gather_rows",
    "tile_rows",
    "reduce_max_axis1",
    "repeat_rows",
    "group_channels",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "smul",
    "sdiv",
    "select",
]


class Tensor:
    """Dense float64 array plus an optional same-shape gradient buffer.

    Tensors are immutable after creation except for gradient accumulation;
    the only sanctioned data mutation is the optimizer's in-place parameter
    update between forward passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed operations.

    backward() replays the record once, in reverse execution order, which
    fixes the gradient accumulation order and makes repeated runs bitwise
    identical.
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and accumulate gradients down the tape."""
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss._tape is not self:
            raise ValueError("loss tensor was not produced on this tape")
        loss.grad = np.ones((), dtype=np.float64)
        for out, bwd in reversed(self._nodes):
            if out.grad is not None:
                bwd(out.grad)


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def from_op(out_data: np.ndarray, inputs, bwd) -> Tensor:
    """Wrap an op result, recording `bwd` on the active tape when gradients flow.

    `bwd` receives the upstream gradient array and must push gradients into
    the inputs via accumulate(); it runs at most once per backward pass.
    This is the extension point for custom differentiable primitives
    defined outside this module (e.g. the set-matching losses).
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out._tape = None
    if _TAPES and out.requires_grad:
        tape = _TAPES[-1]
        out._tape = tape
        tape._nodes.append((out, bwd))
    return out


def accumulate(t: Tensor, g) -> None:
    """Add an upstream gradient into t.grad (allocated lazily)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += g


def _scalar(name: str, s: Tensor) -> None:
    if s.data.shape != ():
        raise ValueError(f"{name}: expected a 0-d scalar tensor, got shape {s.data.shape}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-row affine map: out[m, j] = sum_i x[m, i] * w[i, j] (+ b[j])."""
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ValueError(f"linear: incompatible shapes x{xd.shape} @ w{wd.shape}")
    out = xd @ wd
    if b is not None:
        bd = b.data
        if bd.shape != (wd.shape[1],):
            raise ValueError(
                f"linear: bias shape {bd.shape} does not match output channels ({wd.shape[1]},)"
            )
        out = out + bd
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        accumulate(x, g @ wd.T)
        accumulate(w, xd.T @ g)
        if b is not None:
            accumulate(b, g.sum(axis=0))

    return from_op(out, inputs, bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0.0
    out = np.where(mask, x.data, 0.0)

    def bwd(g):
        accumulate(x, g * mask)

    return from_op(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        accumulate(a, g)
        accumulate(b, g)

    return from_op(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        accumulate(a, g)
        accumulate(b, -g)

    return from_op(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two equal-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        accumulate(a, g * bd)
        accumulate(b, g * ad)

    return from_op(ad * bd, (a, b), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all leading extents must agree."""
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ValueError(
            f"concat_channels: leading extents differ, {a.data.shape} vs {b.data.shape}"
        )
    ca = a.data.shape[-1]
    out = np.concatenate((a.data, b.data), axis=-1)

    def bwd(g):
        accumulate(a, g[..., :ca])
        accumulate(b, g[..., ca:])

    return from_op(out, (a, b), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """out[q, j, :] = x[idx[q, j], :]; backward scatter-adds, so duplicated
    indices accumulate their gradients."""
    xd = x.data
    if xd.ndim != 2:
        raise ValueError(f"gather_rows: x must be 2-D, got shape {xd.shape}")
    ii = np.asarray(idx, dtype=np.int64)
    if ii.ndim != 2:
        raise ValueError(f"gather_rows: idx must be 2-D, got shape {ii.shape}")
    if ii.size and (ii.min() < 0 or ii.max() >= xd.shape[0]):
        raise IndexError(f"gather_rows: index out of bounds for {xd.shape[0]} rows")
    out = xd[ii]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(xd)
            np.add.at(gx, ii.reshape(-1), g.reshape(-1, xd.shape[1]))
            accumulate(x, gx)

    return from_op(out, (x,), bwd)


def tile_rows(x: Tensor, k: int) -> Tensor:
    """[M, C] -> [M, k, C]: repeat each row along a new middle axis."""
    if x.data.ndim != 2:
        raise ValueError(f"tile_rows: x must be 2-D, got shape {x.data.shape}")
    if k < 1:
        raise ValueError(f"tile_rows: k must be >= 1, got {k}")
    out = np.repeat(x.data[:, None, :], k, axis=1)

    def bwd(g):
        accumulate(x, g.sum(axis=1))

    return from_op(out, (x,), bwd)


def reduce_max_axis1(x: Tensor) -> Tensor:
    """Channelwise max over the neighbor axis of [M, k, C].

    The gradient routes to the first-encountered argmax, i.e. the lowest
    neighbor index on exact ties.
    """
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"reduce_max_axis1: x must be 3-D, got shape {xd.shape}")
    am = np.argmax(xd, axis=1)  # first occurrence wins
    out = np.take_along_axis(xd, am[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, am[:, None, :], g[:, None, :], axis=1)
        accumulate(x, gx)

    return from_op(out, (x,), bwd)


def repeat_rows(x: Tensor, u: int) -> Tensor:
    """[M, C] -> [u*M, C]; parent m owns the contiguous rows u*m .. u*m+u-1."""
    if x.data.ndim != 2:
        raise ValueError(f"repeat_rows: x must be 2-D, got shape {x.data.shape}")
    if u < 1:
        raise ValueError(f"repeat_rows: u must be >= 1, got {u}")
    m, c = x.data.shape
    out = np.repeat(x.data, u, axis=0)

    def bwd(g):
        accumulate(x, g.reshape(m, u, c).sum(axis=1))

    return from_op(out, (x,), bwd)


def group_channels(x: Tensor, u: int) -> Tensor:
    """[u*M, C] -> [M, u*C]; exact inverse of repeat_rows' row layout."""
    if x.data.ndim != 2:
        raise ValueError(f"group_channels: x must be 2-D, got shape {x.data.shape}")
    um, c = x.data.shape
    if u < 1 or um % u:
        raise ValueError(f"group_channels: leading extent {um} not divisible by u={u}")
    out = x.data.reshape(um // u, u * c).copy()

    def bwd(g):
        accumulate(x, g.reshape(um, c))

    return from_op(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ValueError(f"reshape: cannot view {x.data.shape} as {shape}")
    old = x.data.shape
    out = x.data.reshape(shape).copy()

    def bwd(g):
        accumulate(x, g.reshape(old))

    return from_op(out, (x,), bwd)


def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def bwd(g):
        accumulate(x, np.broadcast_to(g, x.data.shape))

    return from_op(out, (x,), bwd)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())

    def bwd(g):
        accumulate(x, np.broadcast_to(g / n, x.data.shape))

    return from_op(out, (x,), bwd)


def smul(x: Tensor, s: Tensor) -> Tensor:
    """Scale a tensor by a 0-d scalar tensor; both get gradients."""
    _scalar("smul", s)
    xd, sd = x.data, s.data

    def bwd(g):
        accumulate(x, g * sd)
        accumulate(s, np.asarray((g * xd).sum()))

    return from_op(xd * sd, (x, s), bwd)


def sdiv(x: Tensor, s: Tensor) -> Tensor:
    """Divide a tensor by a 0-d scalar tensor; both get gradients."""
    _scalar("sdiv", s)
    xd, sd = x.data, s.data
    if sd == 0.0:
        raise ZeroDivisionError("sdiv: scalar denominator is zero")

    def bwd(g):
        accumulate(x, g / sd)
        accumulate(s, np.asarray(-(g * xd).sum() / (sd * sd)))

    return from_op(xd / sd, (x, s), bwd)


def select(x: Tensor, i: int) -> Tensor:
    """Pick element i of a 1-D tensor as a 0-d scalar."""
    if x.data.ndim != 1:
        raise ValueError(f"select: x must be 1-D, got shape {x.data.shape}")
    i = int(i)
    if not 0 <= i < x.data.shape[0]:
        raise IndexError(f"select: index {i} out of bounds for length {x.data.shape[0]}")
    out = np.asarray(x.data[i])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        accumulate(x, gx)

    return from_op(out, (x,), bwd)
