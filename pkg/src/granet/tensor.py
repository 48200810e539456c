"""Dense reverse-mode differentiation on numpy float64 arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient
(and tracking is enabled) the output keeps a reference to its parents plus a
closure that pushes the output gradient back to them.  ``backward`` walks the
graph in reverse topological order and then drops the closures, so the tape
lives for one forward/backward pair only.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_TRACKING = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _TRACKING[0]
    _TRACKING[0] = False
    try:
        yield
    finally:
        _TRACKING[0] = prev


def is_tracking() -> bool:
    return _TRACKING[0]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor to every leaf on its tape."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
            # free the tape as we go
            node._parents = ()
            node._backward = None

    # -- operator sugar -------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _TRACKING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


# -- linear algebra ------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` fused into one tape node."""
    out = x.data @ weight.data + bias.data

    def backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, weight, bias), backward)


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    x = as_tensor(x)
    m = sp.csr_matrix(matrix)
    return _make(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(m.T @ g),))


# -- shape ---------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T, (x,), lambda g: (g.T,))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def index(x: Tensor, idx) -> Tensor:
    """Basic/advanced numpy indexing; gradient scattered back with ``np.add.at``."""

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward)


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Rows of a 2-D tensor by index; repeated rows accumulate gradient."""
    rows = np.asarray(rows, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        scatter = sp.csr_matrix(
            (np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(n, len(rows)))
        return (np.asarray(scatter @ g.reshape(len(rows), -1)).reshape((n,) + g.shape[1:]),)

    return _make(x.data[rows], (x,), backward)


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a 1-D tensor as the rows of an ``n``-row matrix."""
    return _make(np.broadcast_to(x.data, (n,) + x.shape).copy(), (x,),
                 lambda g: (g.sum(axis=0),))


# -- reductions ----------------------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; on ties the gradient goes to the lowest index."""
    arg = np.argmax(x.data, axis=axis)
    arg_k = np.expand_dims(arg, axis)
    out = np.take_along_axis(x.data, arg_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg_k, g, axis=axis)
        return (full,)

    return _make(out, (x,), backward)


def segment_max(values: Tensor, offsets: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Row-wise max over contiguous segments ``values[offsets[i]:offsets[i+1]]``.

    Returns the reduced tensor (one row per segment, zeros for empty
    segments) and a boolean mask of non-empty segments.  Ties route the
    gradient to the lowest row within the segment.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = np.diff(offsets)
    nseg = len(counts)
    data = values.data
    nonempty = counts > 0
    c = data.shape[1]
    if nseg and np.all(counts == counts[0]) and counts[0] > 0:
        k = int(counts[0])
        block = data.reshape(nseg, k, c)
        local = np.argmax(block, axis=1)
        arg = local + offsets[:-1, None]
        out = np.take_along_axis(block, local[:, None, :], axis=1)[:, 0, :]
    else:
        out = np.zeros((nseg, c))
        arg = np.zeros((nseg, c), dtype=np.int64)
        starts = offsets[:-1][nonempty]
        if len(starts):
            best = np.maximum.reduceat(data[: offsets[-1]], starts, axis=0)
            out[nonempty] = best
            seg_of_row = np.repeat(np.arange(nseg), counts)
            rows = np.arange(len(seg_of_row))[:, None]
            hit = data[: offsets[-1]] == out[seg_of_row]
            first = np.where(hit, rows, np.iinfo(np.int64).max)
            arg[nonempty] = np.minimum.reduceat(first, starts, axis=0)

    def backward(g):
        full = np.zeros_like(data)
        cols = np.broadcast_to(np.arange(c), arg.shape)
        full[arg[nonempty], cols[nonempty]] = g[nonempty]
        return (full,)

    return _make(out, (values,), backward), nonempty


# -- normalisations and losses ------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def backward(g):
        return (g - sm * np.sum(g, axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


def cross_entropy(logits: Tensor, labels: Iterable[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    labels = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels,
                        dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape[0]}")
    bad = np.nonzero((labels < 0) | (labels >= c))[0]
    if len(bad):
        i = int(bad[0])
        raise ValueError(f"label {int(labels[i])} at index {i} outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, labels]))

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.array(loss), (logits,), backward)


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1 shape mismatch: {pred.shape} vs {target.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = pred.data - target
    ad = np.abs(d)
    small = ad < beta
    vals = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = max(d.size, 1)

    def backward(g):
        return (g * np.where(small, d / beta, np.sign(d)) / n,)

    return _make(np.array(vals.sum() / n if d.size else 0.0), (pred,), backward)


# -- verification --------------------------------------------------------
def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               tol: float | None = None, sample: int | None = None, seed: int = 0) -> dict:
    """Compare tape gradients of scalar ``fn(*tensors)`` with central differences.

    Relative error per input is ``max|tape - fd| / max(max|tape|, max|fd|)``
    over the checked coordinates.  An input whose gradient vanishes (below
    ``1e-7`` of the largest gradient in the whole check, e.g. a bias under a
    softmax) is measured against that largest gradient instead.  With ``sample`` only that many seeded
    random coordinates per input are perturbed (all of them when the input
    is smaller).  Returns ``{"errors": [...], "max_error": float, "passed": bool|None}``.
    """
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued closure")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("closure output is not finite")
    out.backward()
    rng = np.random.default_rng(seed)
    diffs, scales = [], []
    with no_grad():
        for i, a in enumerate(arrays):
            tape = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
            flat = a.reshape(-1)
            coords = np.arange(flat.size)
            if sample is not None and flat.size > sample:
                coords = np.sort(rng.choice(flat.size, size=sample, replace=False))
            fd = np.zeros(len(coords))
            for n, j in enumerate(coords):
                keep = flat[j]
                flat[j] = keep + h
                up = fn(*[Tensor(x) for x in arrays]).data
                flat[j] = keep - h
                down = fn(*[Tensor(x) for x in arrays]).data
                flat[j] = keep
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise FloatingPointError(f"non-finite output perturbing input {i}[{j}]")
                fd[n] = (float(up) - float(down)) / (2 * h)
            tp = tape.reshape(-1)[coords]
            diffs.append(float(np.abs(tp - fd).max(initial=0.0)))
            scales.append(max(np.abs(tp).max(initial=0.0), np.abs(fd).max(initial=0.0)))
    top = max(scales, default=0.0)
    errors = [d / max(sc if sc >= 1e-7 * top else top, 1e-12) for d, sc in zip(diffs, scales)]
    worst = max(errors, default=0.0)
    return {"errors": errors, "max_error": worst,
            "passed": None if tol is None else bool(worst < tol)}
