"""Dense reverse-mode autodiff on 2-D float64 arrays.

Small enough to read in one sitting, big enough to train 2-3 layer GNNs
with attention, dropout, and the structure-regularized losses used by the
trainers. Everything is a (rows, cols) matrix; scalars are 1x1.

Single-threaded by design: values are immutable after construction except
for the ``grad`` accumulators.
"""

from __future__ import annotations

import numpy as np

# Clamp floor for logs / divisions; probabilities live in [EPS, 1 - EPS].
EPS = 1e-10


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class DegenerateRowError(ValueError):
    """A masked softmax row has no admissible entries."""


class TapeError(RuntimeError):
    """backward() was asked to run on a tensor with no recorded graph."""


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A 2-D value plus the recording needed to replay gradients.

    Each operation that touches a gradient-requiring input links the result
    back to its parents with a closure; ``backward()`` replays those
    closures in reverse topological order.
    """

    __slots__ = ("data", "requires_grad", "grad", "_grad_borrowed",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._grad_borrowed = False
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        out = _result(self.data.T, (self,))
        if out.requires_grad:
            def backward(g):
                _accum(self, g.T)
            out._backward = backward
        return out

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide,
                       lambda g, a, b: g / b,
                       lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = _result(self.data @ other.data, (self, other))
        if out.requires_grad:
            a, b = self, other
            def backward(g):
                if a.requires_grad:
                    _accum(a, g @ b.data.T)
                if b.requires_grad:
                    _accum(b, a.data.T @ g)
            out._backward = backward
        return out

    # -- elementwise functions -----------------------------------------

    def exp(self):
        out = _result(np.exp(self.data), (self,))
        if out.requires_grad:
            y = out.data
            out._backward = lambda g: _accum(self, g * y)
        return out

    def log(self):
        if np.any(self.data <= 0.0):
            raise ValueError(
                "log of non-positive value; clamp the input with EPS first")
        out = _result(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g: _accum(self, g / self.data)
        return out

    def sqrt(self):
        out = _result(np.sqrt(self.data), (self,))
        if out.requires_grad:
            y = out.data
            out._backward = lambda g: _accum(self, g / (2.0 * y))
        return out

    def sigmoid(self):
        out = _result(_sigmoid(self.data), (self,))
        if out.requires_grad:
            y = out.data
            out._backward = lambda g: _accum(self, g * y * (1.0 - y))
        return out

    def relu(self):
        out = _result(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            alive = self.data > 0.0
            out._backward = lambda g: _accum(self, g * alive)
        return out

    def leaky_relu(self, slope: float = 0.2):
        out = _result(np.where(self.data > 0.0, self.data,
                               slope * self.data), (self,))
        if out.requires_grad:
            factor = np.where(self.data > 0.0, 1.0, slope)
            out._backward = lambda g: _accum(self, g * factor)
        return out

    def clamp(self, lo: float, hi: float):
        out = _result(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            inside = (self.data >= lo) & (self.data <= hi)
            out._backward = lambda g: _accum(self, g * inside)
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis: int | None = None):
        """Full or per-axis sum; axis sums keep the reduced dim as size 1."""
        if axis is None:
            out = _result(self.data.sum().reshape(1, 1), (self,))
        else:
            out = _result(self.data.sum(axis=axis, keepdims=True), (self,))
        if out.requires_grad:
            out._backward = lambda g: _accum(
                self, np.broadcast_to(g, self.shape))
        return out

    def mean(self):
        return self.sum() / float(self.data.size)

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        The recorded graph is replayed in reverse topological order; the
        seed gradient is 1 (the tensor must be scalar-shaped).
        """
        if not self.requires_grad:
            raise TapeError("backward() on a tensor with no recorded graph")
        if self.data.size != 1:
            raise ShapeError("backward() expects a 1x1 loss tensor")

        order = []
        seen = set()
        stack = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-softplus(-x)) is stable across the whole real line.
    return np.exp(-np.logaddexp(0.0, -x))


def _result(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._grad_borrowed = False
    out._parents = tuple(p for p in parents if p.requires_grad) if out.requires_grad else ()
    out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Accumulate into t.grad without copying on the common single-source path.

    The first contribution is adopted by reference and never mutated in
    place; a second contribution reallocates, after which in-place adds
    are safe.
    """
    g = _unbroadcast(np.asarray(g), t.data.shape)
    if t.grad is None:
        t.grad = g
        t._grad_borrowed = True
    elif t._grad_borrowed:
        t.grad = t.grad + g
        t._grad_borrowed = False
    else:
        t.grad += g


def _binary(a: Tensor, other, fn, grad_a, grad_b) -> Tensor:
    b = as_tensor(other)
    _broadcast_shape(a.shape, b.shape)
    out = _result(fn(a.data, b.data), (a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                _accum(a, grad_a(g, a.data, b.data))
            if b.requires_grad:
                _accum(b, grad_b(g, a.data, b.data))
        out._backward = backward
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two tensors side by side (same row count)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch: {a.shape} || {b.shape}")
    out = _result(np.hstack([a.data, b.data]), (a, b))
    if out.requires_grad:
        split = a.shape[1]
        def backward(g):
            if a.requires_grad:
                _accum(a, g[:, :split])
            if b.requires_grad:
                _accum(b, g[:, split:])
        out._backward = backward
    return out


def rowwise_softmax_masked(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax of each row restricted to mask==1 entries; zeros elsewhere.

    Every row of the mask must have at least one admissible entry; callers
    aggregating over neighborhoods insert the self-loop first.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != scores.shape:
        raise ShapeError(f"mask shape {mask.shape} != scores {scores.shape}")
    row_counts = mask.sum(axis=1)
    if np.any(row_counts == 0):
        bad = int(np.argmax(row_counts == 0))
        raise DegenerateRowError(f"mask row {bad} has no admissible entries")

    shifted = scores.data - np.max(
        np.where(mask > 0, scores.data, -np.inf), axis=1, keepdims=True)
    weights = np.exp(np.where(mask > 0, shifted, 0.0)) * mask
    probs = weights / weights.sum(axis=1, keepdims=True)

    out = _result(probs, (scores,))
    if out.requires_grad:
        def backward(g):
            inner = (g * probs).sum(axis=1, keepdims=True)
            _accum(scores, probs * (g - inner))
        out._backward = backward
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of x by index (duplicates allowed)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = _result(x.data[idx], (x,))
    if out.requires_grad:
        def backward(g):
            acc = np.zeros_like(x.data)
            np.add.at(acc, idx, g)
            _accum(x, acc)
        out._backward = backward
    return out


def scatter_add_rows(values: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Sum value rows into an (n_rows, cols) tensor at the given indices."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    acc = np.zeros((n_rows, values.shape[1]))
    np.add.at(acc, idx, values.data)
    out = _result(acc, (values,))
    if out.requires_grad:
        out._backward = lambda g: _accum(values, g[idx])
    return out


def scatter_edges(values: Tensor, src: np.ndarray, dst: np.ndarray,
                  n: int) -> Tensor:
    """Place one column of per-pair values symmetrically into an (n, n) matrix.

    Entry (src[k], dst[k]) and its mirror both receive values[k]; pairs
    must be unique and off-diagonal.
    """
    values = as_tensor(values)
    if values.shape[1] != 1:
        raise ShapeError("scatter_edges expects a column of values")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    dense = np.zeros((n, n))
    flat = values.data[:, 0]
    dense[src, dst] = flat
    dense[dst, src] = flat
    out = _result(dense, (values,))
    if out.requires_grad:
        out._backward = lambda g: _accum(
            values, (g[src, dst] + g[dst, src]).reshape(-1, 1))
    return out


def embed_diag(values: Tensor) -> Tensor:
    """Spread an (n, 1) column onto the diagonal of an (n, n) matrix."""
    values = as_tensor(values)
    if values.shape[1] != 1:
        raise ShapeError("embed_diag expects a column of values")
    out = _result(np.diag(values.data[:, 0]), (values,))
    if out.requires_grad:
        out._backward = lambda g: _accum(
            values, np.diagonal(g).reshape(-1, 1))
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def straight_through_threshold(x: Tensor, threshold: float = 0.5) -> Tensor:
    """Binary forward value, identity gradient.

    Forward emits 1 where x > threshold and 0 elsewhere; the gradient
    passes through to x unchanged, which lets discrete samples sit inside
    a differentiable path.
    """
    x = as_tensor(x)
    out = _result((x.data > threshold).astype(np.float64), (x,))
    if out.requires_grad:
        out._backward = lambda g: _accum(x, g)
    return out


class Adam:
    """Adam with classic L2 weight decay folded into the gradient.

    Moment buffers live for the lifetime of the optimizer, so one
    instance per training phase keeps state across its steps.
    """

    def __init__(self, params: list[Tensor], lr: float,
                 weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
