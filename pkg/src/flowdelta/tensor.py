"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every differentiable op records a node on the active tape; ``backward``
replays the tape in reverse creation order, so topological order is free.
All storage is row-major float64 numpy; reshape/transpose are views where
numpy allows it.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class UsageError(RuntimeError):
    """Raised when an op is called outside its contract (non-scalar loss etc.)."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class Rng:
    """Deterministic PRNG: identical seed gives identical draws everywhere.

    Thin wrapper over numpy's PCG64 so no global RNG state is touched.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape):
        return self._gen.uniform(low, high, size=shape).astype(np.float64)

    def normal(self, shape, scale=1.0):
        return (self._gen.standard_normal(size=shape) * scale).astype(np.float64)

    def randint(self, low, high):
        """Integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        return items[self.randint(0, len(items))]

    def split(self):
        """Derive an independent child generator (for parallel-safe data gen)."""
        return Rng(self.randint(0, 2**62))


class Tape:
    """Append-only record of op nodes; consumed by one backward pass."""

    def __init__(self):
        self.nodes = []
        self.next_id = 0

    def append(self, node):
        node.node_id = self.next_id
        self.next_id += 1
        self.nodes.append(node)

    def reset(self):
        self.nodes = []
        self.next_id = 0


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "node_id")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.node_id = None


_ACTIVE_TAPE = Tape()


def active_tape():
    return _ACTIVE_TAPE


def set_active_tape(tape):
    global _ACTIVE_TAPE
    _ACTIVE_TAPE = tape


class Tensor:
    """Float64 n-d value, optionally tracked on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_on_tape")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_id = None
        self._on_tape = False

    @property
    def shape(self):
        return self.data.shape

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, backward_fn):
    if any(p.requires_grad or p._on_tape for p in parents):
        out._on_tape = True
        node = _Node(out, parents, backward_fn)
        _ACTIVE_TAPE.append(node)
        out.tape_id = node.node_id
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to the given broadcast-source shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# core ops


def _mm(x, y):
    # einsum keeps each output row's reduction order independent of the batch
    # size, so batched and per-row paths agree bitwise (BLAS gemm does not)
    if x.ndim == 2 and y.ndim == 2:
        return np.einsum("ij,jk->ik", x, y)
    return np.matmul(x, y)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1 or a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(_mm(a.data, b.data))

    def backward_fn(g):
        _accum(a, _unbroadcast(_mm(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accum(b, _unbroadcast(_mm(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _record(out, [a, b], backward_fn)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, [a, b], backward_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise DimensionError(f"sub shapes incompatible: {a.shape} - {b.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, [a, b], backward_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, [a, b], backward_fn)


def scale(a, c):
    """Multiply by a python scalar (no tape node for the scalar)."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def backward_fn(g):
        _accum(a, g * c)

    return _record(out, [a], backward_fn)


def sigmoid(x):
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)

    def backward_fn(g):
        _accum(x, g * s * (1.0 - s))

    return _record(out, [x], backward_fn)


def tanh(x):
    x = _as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward_fn(g):
        _accum(x, g * (1.0 - t * t))

    return _record(out, [x], backward_fn)


def relu(x):
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def backward_fn(g):
        _accum(x, g * (x.data > 0.0))

    return _record(out, [x], backward_fn)


def log(x, floor=0.0):
    x = _as_tensor(x)
    clipped = np.maximum(x.data, floor) if floor > 0.0 else x.data
    out = Tensor(np.log(clipped))

    def backward_fn(g):
        _accum(x, g / clipped)

    return _record(out, [x], backward_fn)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise DimensionError(f"concat shapes incompatible: {[t.shape for t in tensors]}")
    sizes = [t.data.shape[axis] for t in tensors]

    def backward_fn(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _record(out, tensors, backward_fn)


def softmax(x, axis=-1):
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def backward_fn(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum(x, p * (g - dot))

    return _record(out, [x], backward_fn)


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def backward_fn(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        _accum(beta, g.sum(axis=reduce_axes) if reduce_axes else g)
        gx = g * gamma.data
        # standard layer-norm backward through mean/variance
        dxhat_sum = gx.sum(axis=-1, keepdims=True)
        dxhat_dot = (gx * xhat).sum(axis=-1, keepdims=True)
        _accum(x, inv * (gx - dxhat_sum / d - xhat * dxhat_dot / d))

    return _record(out, [x, gamma, beta], backward_fn)


def reshape(x, shape):
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _record(out, [x], backward_fn)


def transpose(x, axes):
    x = _as_tensor(x)
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    inverse = np.argsort(axes)

    def backward_fn(g):
        _accum(x, np.transpose(g, inverse))

    return _record(out, [x], backward_fn)


def tsum(x, axis=None):
    x = _as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis))

    def backward_fn(g):
        if axis is None:
            _accum(x, np.full_like(x.data, np.asarray(g).reshape(())))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _record(out, [x], backward_fn)


def mean(x):
    n = x.data.size
    return scale(tsum(x), 1.0 / n)


def gather_rows(table, indices):
    """Embedding lookup: rows of ``table`` selected by an int array."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def backward_fn(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _record(out, [table], backward_fn)


def select(x, index, axis=0):
    """Slice one index out of an axis (keeps remaining axes)."""
    x = _as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = index
    out = Tensor(x.data[tuple(idx)].copy())

    def backward_fn(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[tuple(idx)] += g.reshape(x.grad[tuple(idx)].shape)

    return _record(out, [x], backward_fn)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def backward_fn(g):
        for i, t in enumerate(tensors):
            idx = [slice(None)] * g.ndim
            idx[axis] = i
            _accum(t, g[tuple(idx)])

    return _record(out, tensors, backward_fn)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# backward + gradient checking


def backward(loss, tape=None):
    """Populate .grad on every requires_grad tensor reachable from ``loss``.

    The tape is consumed: it is reset after the walk.
    """
    tape = tape or _ACTIVE_TAPE
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss._on_tape:
        raise UsageError("loss is detached from the tape (nothing requires grad)")
    loss.grad = np.ones_like(loss.data)
    visited = 0
    for node in reversed(tape.nodes):
        if node.out.grad is None:
            continue
        node.backward_fn(node.out.grad)
        visited += 1
        if not node.out.requires_grad:
            node.out.grad = None  # free intermediates
    tape.reset()
    return visited


def grad_check(f, params, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``;
    it must be deterministic. Relative error uses max(1, |fd|) as denominator.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise UsageError(f"eps {eps} outside [1e-7, 1e-3]")
    for p in params:
        p.zero_grad()
    _ACTIVE_TAPE.reset()
    loss = f()
    backward(loss)
    analytic = [np.array(p.grad, copy=True) if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    max_err = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            _ACTIVE_TAPE.reset()
            f_plus = f().item()
            flat[i] = orig - eps
            _ACTIVE_TAPE.reset()
            f_minus = f().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite perturbation at param {pi} index {i}")
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[pi].reshape(-1)[i] - fd) / max(1.0, abs(fd))
            max_err = max(max_err, err)
    _ACTIVE_TAPE.reset()
    for p in params:
        p.zero_grad()
    return max_err
