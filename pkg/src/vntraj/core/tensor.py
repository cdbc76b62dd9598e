"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op builds its output eagerly and, when any input requires a gradient,
records a backward closure on the output.  ``backward`` walks the recorded
graph in reverse topological order.  Non-finite values are trapped at the op
that produced them.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class NumericalError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    # a NaN or Inf anywhere makes the sum non-finite
    if not math.isfinite(float(np.add.reduce(arr, axis=None))):
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite value produced by {op}")
    return arr


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(_check(data, op))
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def cosine(x) -> Tensor:
    """Elementwise cosine."""
    x = as_tensor(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cosine")


# ---------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis, keepdims), 1.0 / float(n))


def logsumexp(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return _make(out, (x,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


def softmax_rows(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True = keep) excludes entries."""
    x = as_tensor(x)
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw, "softmax")


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------- linear algebra / shape


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for operands of rank >= 2, with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def index(x, key) -> Tensor:
    """General numpy indexing; the backward scatter-adds so repeated indices sum."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(x.data[key]), (x,), bw, "index")


def gather_rows(x, idx: np.ndarray) -> Tensor:
    """Rows ``x[idx]`` of a matrix; backward is a sparse scatter-add."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def bw(g):
        scatter = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))),
                                shape=(n, len(idx)))
        return (np.asarray(scatter @ g.reshape(len(idx), -1)).reshape((n,) + g.shape[1:]),)

    return _make(x.data[idx], (x,), bw, "gather_rows")


def cumsum(x, axis: int) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(x.data, axis=axis), (x,), bw, "cumsum")


# ---------------------------------------------------------------- set / segment ops


def segment_max(x, starts: np.ndarray) -> Tensor:
    """Elementwise max over contiguous row segments beginning at ``starts``.

    The gradient flows to the first row attaining the max in each segment and
    column, which is a valid subgradient under ties.
    """
    x = as_tensor(x)
    starts = np.asarray(starts, dtype=np.int64)
    if len(starts) == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= x.shape[0]:
        raise ValueError("segments must be non-empty and cover the rows in order")
    out = np.maximum.reduceat(x.data, starts, axis=0)

    def bw(g):
        counts = np.diff(np.append(starts, x.shape[0]))
        seg = np.repeat(np.arange(len(starts)), counts)
        hit = x.data == out[seg]
        rows = np.arange(x.shape[0])[:, None]
        first = np.minimum.reduceat(np.where(hit, rows, x.shape[0]), starts, axis=0)
        full = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.shape[1]), first.shape)
        full[first, cols] = g
        return (full,)

    return _make(out, (x,), bw, "segment_max")


def grouped_segment_max(x, groups: Sequence[tuple[int, int, int, np.ndarray]], n_out: int) -> Tensor:
    """Segment max where equal-length segments are stored contiguously.

    Each group ``(start, count, length, out_rows)`` covers rows
    ``start : start + count * length`` of ``x``, viewed as ``count`` segments of
    ``length`` rows; segment ``s`` lands in output row ``out_rows[s]``.  The
    gradient goes to the first maximizing row, as in ``segment_max``.
    """
    x = as_tensor(x)
    C = x.shape[1]
    out = np.empty((n_out, C))
    picks = []
    for start, count, length, rows in groups:
        block = x.data[start:start + count * length].reshape(count, length, C)
        am = block.argmax(axis=1)[:, None, :]
        out[rows] = np.take_along_axis(block, am, axis=1)[:, 0]
        picks.append(am)

    def bw(g):
        full = np.zeros_like(x.data)
        for (start, count, length, rows), am in zip(groups, picks):
            block = full[start:start + count * length].reshape(count, length, C)
            np.put_along_axis(block, am, g[rows][:, None, :], axis=1)
        return (full,)

    return _make(out, (x,), bw, "grouped_segment_max")


def max_over_set(x) -> Tensor:
    """Elementwise max over the rows of a matrix (a set of vectors)."""
    return reshape(segment_max(x, np.array([0])), (x.shape[1],))


def maxpool_rows(x, starts: np.ndarray) -> Tensor:
    return segment_max(x, starts)


# ---------------------------------------------------------------- normalization


def layer_norm_rows(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with optional affine parameters."""
    x = as_tensor(x)
    xhat, inv = _ln_core(x.data, eps)
    parents = [x]
    if gamma is not None:
        gamma = as_tensor(gamma)
        parents.append(gamma)
        out = xhat * gamma.data
    else:
        out = xhat.copy()
    if beta is not None:
        beta = as_tensor(beta)
        parents.append(beta)
        out += beta.data

    def bw(g):
        grads = []
        g2 = g.reshape(-1, g.shape[-1])
        xh2 = xhat.reshape(-1, g.shape[-1])
        if x.requires_grad:
            gx = g * gamma.data if gamma is not None else g.copy()
            m2 = np.einsum("...i,...i->...", gx, xhat)[..., None] / g.shape[-1]
            gx -= gx.mean(axis=-1, keepdims=True)
            gx -= xhat * m2
            gx *= inv
            grads.append(gx)
        else:
            grads.append(None)
        if gamma is not None:
            grads.append(np.einsum("ni,ni->i", g2, xh2) if gamma.requires_grad else None)
        if beta is not None:
            grads.append(g2.sum(axis=0) if beta.requires_grad else None)
        return grads

    return _make(out, parents, bw, "layer_norm")


def _ln_core(z: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    xhat = z - z.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(np.einsum("...i,...i->...", xhat, xhat)[..., None] / xhat.shape[-1] + eps)
    xhat *= inv
    return xhat, inv


def pair_mlp(a, b, pair_i: np.ndarray, pair_j: np.ndarray, gamma, beta, weight, bias,
             eps: float = 1e-5, chunk: int = 4096) -> Tensor:
    """Fused per-pair MLP tail: ``relu(LN(a[i] + b[j])) @ weight + bias`` for each pair.

    Equivalent to composing ``gather_rows``, ``add``, ``layer_norm_rows``,
    ``relu``, and ``matmul``, but evaluated in row chunks that stay in cache;
    the backward pass recomputes the chunk activations instead of storing them.
    """
    a, b, gamma, beta, weight, bias = (as_tensor(t) for t in (a, b, gamma, beta, weight, bias))
    pair_i = np.asarray(pair_i, dtype=np.int64)
    pair_j = np.asarray(pair_j, dtype=np.int64)
    n = len(pair_i)
    out = np.empty((n, weight.shape[1]))

    def hidden(lo, hi):
        z = a.data[pair_i[lo:hi]]
        z += b.data[pair_j[lo:hi]]
        xhat, inv = _ln_core(z, eps)
        pre = xhat * gamma.data
        pre += beta.data
        return xhat, inv, pre

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        _, _, pre = hidden(lo, hi)
        np.maximum(pre, 0.0, out=pre)
        np.matmul(pre, weight.data, out=out[lo:hi])
        out[lo:hi] += bias.data

    def bw(g):
        g_w = np.zeros_like(weight.data)
        g_gamma = np.zeros_like(gamma.data)
        g_beta = np.zeros_like(beta.data)
        g_z = np.empty((n, a.shape[1]))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            xhat, inv, pre = hidden(lo, hi)
            mask = pre > 0
            np.maximum(pre, 0.0, out=pre)
            gc = g[lo:hi]
            g_w += pre.T @ gc
            gh = gc @ weight.data.T
            gh *= mask
            g_gamma += np.einsum("ni,ni->i", gh, xhat)
            g_beta += gh.sum(axis=0)
            gh *= gamma.data
            m2 = np.einsum("ni,ni->n", gh, xhat)[:, None] / gh.shape[1]
            gh -= gh.mean(axis=1, keepdims=True)
            gh -= xhat * m2
            gh *= inv
            g_z[lo:hi] = gh
        g_b = g.sum(axis=0)

        def scatter(idx, rows):
            m = sp.csr_matrix((np.ones(n), (idx, np.arange(n))), shape=(rows, n))
            return np.asarray(m @ g_z)

        ga = scatter(pair_i, a.shape[0]) if a.requires_grad else None
        gb = scatter(pair_j, b.shape[0]) if b.requires_grad else None
        return ga, gb, g_gamma, g_beta, g_w, g_b

    return _make(out, (a, b, gamma, beta, weight, bias), bw, "pair_mlp")
