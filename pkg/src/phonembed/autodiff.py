"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The networks in this package are small recurrent stacks, so the engine
keeps to the handful of primitives they need: broadcast arithmetic,
matmul, the pointwise nonlinearities, masked reductions, log-softmax with
index picking, embedding lookup, and the fused recurrent cell from
:mod:`phonembed.kernels`.  Graphs are built eagerly and freed after
``backward`` so long training loops do not accumulate state.

Every ``Tensor`` wraps a C-contiguous float64 array.  Gradients are plain
numpy arrays of the same shape, accumulated across consumers.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _asarray(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return np.ascontiguousarray(a)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_vjp", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._vjp: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- operators ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None, free_graph: bool = True):
        """Backpropagate from this node.

        ``grad`` defaults to ones (so a scalar loss needs no argument).
        The graph reachable from this node is released afterwards unless
        ``free_graph`` is False.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = (
            np.ones_like(self.data) if grad is None else _asarray(grad).reshape(self.data.shape)
        )
        for node in reversed(topo):
            interior = node._vjp is not None
            if interior:
                node._vjp(node.grad)
            if free_graph:
                node._vjp = None
                node._parents = ()
                # Leaves keep their grads (parameters, and inputs under
                # input-gradient checks); interior results are freed.
                if interior and node is not self and not isinstance(node, Parameter):
                    node.grad = None


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True  # parameters track even under no_grad construction
        self.name = name


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    # ``fresh`` promises g is newly allocated and unaliased, so the first
    # consumer may take ownership instead of copying.
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            _accum(a, ga, fresh=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            _accum(b, gb, fresh=gb is not g)

    return _make(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            _accum(a, ga, fresh=ga is not g)
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape), fresh=True)

    return _make(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape), fresh=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape), fresh=True)

    return _make(data, (a, b), vjp)


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = a.data * a.data

    def vjp(g):
        _accum(a, 2.0 * a.data * g, fresh=True)

    return _make(data, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def vjp(g):
        _accum(a, g * (0.5 / data), fresh=True)

    return _make(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T, fresh=True)
        if b.requires_grad:
            _accum(b, a.data.T @ g, fresh=True)

    return _make(data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.ascontiguousarray(a.data.T)

    def vjp(g):
        _accum(a, np.ascontiguousarray(g.T), fresh=True)

    return _make(data, (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(p, np.ascontiguousarray(g[tuple(sl)]), fresh=True)

    return _make(data, tuple(parts), vjp)


# -- nonlinearities ---------------------------------------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid_np(a.data)

    def vjp(g):
        _accum(a, g * data * (1.0 - data), fresh=True)

    return _make(data, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        _accum(a, g * (1.0 - data * data), fresh=True)

    return _make(data, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def vjp(g):
        _accum(a, g * (a.data > 0.0), fresh=True)

    return _make(data, (a,), vjp)


# -- reductions -------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), vjp)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


# -- softmax / indexing ----------------------------------------------


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax of a [B, K] tensor."""
    logits = as_tensor(logits)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    data = shifted - lse

    def vjp(g):
        sm = np.exp(data)
        _accum(logits, g - sm * g.sum(axis=1, keepdims=True), fresh=True)

    return _make(data, (logits,), vjp)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of a [B, K] tensor."""
    logits = as_tensor(logits)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        _accum(logits, data * (g - (g * data).sum(axis=1, keepdims=True)), fresh=True)

    return _make(data, (logits,), vjp)


def pick(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[b] = a[b, idx[b]] for a [B, K] tensor; returns [B]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def vjp(g):
        z = np.zeros_like(a.data)
        z[rows, idx] = g
        _accum(a, z, fresh=True)

    return _make(data, (a,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; ids is an integer array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def vjp(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids, g)
        _accum(table, z, fresh=True)

    return _make(data, (table,), vjp)


def straight_through_onehot(probs: Tensor) -> Tensor:
    """Hard one-hot of the row argmax; gradients pass through unchanged."""
    probs = as_tensor(probs)
    data = np.zeros_like(probs.data)
    data[np.arange(data.shape[0]), probs.data.argmax(axis=1)] = 1.0

    def vjp(g):
        _accum(probs, g)

    return _make(data, (probs,), vjp)


# -- recurrent cell ---------------------------------------------------


def gru_cell(xp: Tensor, hp: Tensor, h_prev: Tensor) -> Tensor:
    """Fused gated-recurrence cell (see :mod:`phonembed.kernels`)."""
    h_new, r, z, n = kernels.gru_cell_forward(xp.data, hp.data, h_prev.data)

    def vjp(g):
        g = np.ascontiguousarray(g)
        dxp, dhp, dh = kernels.gru_cell_backward(g, hp.data, h_prev.data, r, z, n)
        if xp.requires_grad:
            _accum(xp, dxp, fresh=True)
        if hp.requires_grad:
            _accum(hp, dhp, fresh=True)
        if h_prev.requires_grad:
            _accum(h_prev, dh, fresh=True)

    return _make(h_new, (xp, hp, h_prev), vjp)


# -- utilities --------------------------------------------------------


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def numeric_gradient(fn: Callable[[], float], param: Tensor, flat_index: int, step: float = 1e-4) -> float:
    """Central finite difference of ``fn`` w.r.t. one parameter entry."""
    flat = param.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    f_plus = fn()
    flat[flat_index] = orig - step
    f_minus = fn()
    flat[flat_index] = orig
    return (f_plus - f_minus) / (2.0 * step)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    n_entries: int = 10,
    step: float = 1e-4,
    rel_tol: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backprop gradients against central differences.

    Picks ``n_entries`` random parameter entries, recomputes the loss at
    perturbed values, and returns the worst relative error.  Raises
    ``AssertionError`` when the tolerance is exceeded.
    """
    rng = rng or np.random.default_rng(0)
    zero_grads(params)
    loss = loss_fn()
    loss.backward()

    def evaluate() -> float:
        with no_grad():
            return loss_fn().item()

    worst = 0.0
    sized = [p for p in params if p.data.size > 0]
    for _ in range(n_entries):
        p = sized[int(rng.integers(len(sized)))]
        i = int(rng.integers(p.data.size))
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        numeric = numeric_gradient(evaluate, p, i, step=step)
        denom = max(abs(analytic), abs(numeric), 1e-6)
        err = abs(analytic - numeric) / denom
        worst = max(worst, err)
        if err > rel_tol:
            raise AssertionError(
                f"gradient mismatch on {getattr(p, 'name', 'tensor')}[{i}]: "
                f"analytic={analytic:.6e} numeric={numeric:.6e} rel={err:.3e}"
            )
    return worst
