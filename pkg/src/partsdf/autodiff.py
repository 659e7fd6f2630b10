"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small engine: every operation records a vector-Jacobian
closure on the nodes it creates, and ``Tensor.backward`` replays them in
reverse topological order. The op set is exactly what the decoders,
encoder, analytic primitives, and losses need -- dense layers, pointwise
nonlinearities, min/max composition, reductions, gathers -- nothing more.

Subgradient conventions (shared with the geometry module's tie-breaking):

* ``minimum``/``maximum``/``reduce_min`` route the gradient to the active
  branch; on exact ties the first (lowest-index) argument wins.
* ``absolute`` and ``relu`` have gradient 0 at exactly 0.
* ``clamp`` passes gradient only strictly inside the band.
* ``sqrt`` has gradient 0 at exactly 0 (the composed distance formulas
  are constant there, so this is the correct one-sided derivative).
"""

from __future__ import annotations

import json

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class Tensor:
    """A numpy array plus the closure that backpropagates through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # Make numpy defer mixed ndarray-op-Tensor expressions to the
    # reflected operators below instead of iterating the tensor.
    __array_ufunc__ = None

    def __init__(self, data, parents=(), vjp=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None):
        """Backpropagate from this node; ``seed`` defaults to ones.

        The node must be the result of recorded operations (or a leaf);
        calling backward on a scalar loss fills ``.grad`` on every
        reachable tensor with ``requires_grad``.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no recorded computation")
        if seed is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.data)

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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # Operator sugar; the free functions below do the real work.
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


class Parameter(Tensor):
    """A trainable leaf: named, gradient-bearing, owned by one optimizer.

    ``sparse_rows=True`` marks an embedding-style table (one row per
    shape) whose Adam state advances independently per row, and only on
    rows touched by the current batch.
    """

    __slots__ = ("name", "sparse_rows")

    def __init__(self, data, name, sparse_rows=False):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name
        self.sparse_rows = sparse_rows

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None


def _as_array(x, like=None):
    if isinstance(x, Tensor):
        raise TypeError("expected a plain array")
    dtype = like.dtype if like is not None else None
    return np.asarray(x, dtype=dtype)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, dfa, dfb):
    """Build a broadcasting binary op from value/partial functions."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return fwd(np.asarray(a), np.asarray(b))
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    out_data = fwd(a.data, b.data)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(dfa(g, a.data, b.data, out_data), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(dfb(g, a.data, b.data, out_data), b.data.shape))

    return Tensor(out_data, parents=(a, b), vjp=vjp)


def _unary(x, fwd, dfx):
    if not isinstance(x, Tensor):
        return fwd(np.asarray(x))
    out_data = fwd(x.data)

    def vjp(g):
        x._accumulate(dfx(g, x.data, out_data))

    return Tensor(out_data, parents=(x,), vjp=vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y)
    )


def matmul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.asarray(a) @ np.asarray(b)
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), vjp=vjp)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, o: g * (v > 0))


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, o: g * (1.0 - o * o))


def sigmoid(x):
    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _unary(x, fwd, lambda g, v, o: g * o * (1.0 - o))


def softplus(x):
    # log(1 + e^x), computed stably; derivative is the sigmoid.
    def fwd(v):
        return np.logaddexp(0.0, v)

    def dfx(g, v, o):
        s = np.empty_like(v)
        pos = v >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        s[~pos] = e / (1.0 + e)
        return g * s

    return _unary(x, fwd, dfx)


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v)


def sin(x):
    return _unary(x, np.sin, lambda g, v, o: g * np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda g, v, o: -g * np.sin(v))


def sqrt(x):
    return _unary(
        x,
        np.sqrt,
        lambda g, v, o: g * np.where(v > 0, 0.5 / np.where(v > 0, o, 1.0), 0.0),
    )


def square(x):
    return _unary(x, np.square, lambda g, v, o: g * 2.0 * v)


def absolute(x):
    return _unary(x, np.abs, lambda g, v, o: g * np.sign(v))


def minimum(a, b):
    return _binary(
        a,
        b,
        np.minimum,
        lambda g, x, y, o: g * (x <= y),
        lambda g, x, y, o: g * (x > y),
    )


def maximum(a, b):
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y, o: g * (x >= y),
        lambda g, x, y, o: g * (x < y),
    )


def clamp(x, lo, hi):
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, v, o: g * ((v > lo) & (v < hi)),
    )


def reduce_min(tensors):
    """Pointwise minimum over a list of same-shape tensors.

    Gradient is routed to the winning stream only; exact ties go to the
    lowest index, matching the composite-union convention.
    """
    if len(tensors) == 0:
        raise ValueError("reduce_min of an empty list")
    if len(tensors) == 1:
        return tensors[0] if isinstance(tensors[0], Tensor) else np.asarray(tensors[0])
    if not any(isinstance(t, Tensor) for t in tensors):
        return np.min(np.stack(tensors, axis=0), axis=0)
    tensors = [t if isinstance(t, Tensor) else Tensor(np.asarray(t)) for t in tensors]
    stacked = np.stack([t.data for t in tensors], axis=0)
    winner = np.argmin(stacked, axis=0)
    out_data = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def vjp(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g * (winner == i))

    return Tensor(out_data, parents=tuple(tensors), vjp=vjp)


def concat(tensors, axis=1):
    tensors = [t if isinstance(t, Tensor) else Tensor(np.asarray(t)) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(g[tuple(idx)])

    return Tensor(out_data, parents=tuple(tensors), vjp=vjp)


def take(x, key):
    """Indexing/gather. Integer-array keys scatter-add on backward, so a
    row gathered twice accumulates both contributions (the latent-table
    lookup relies on this)."""
    if not isinstance(x, Tensor):
        return np.asarray(x)[key]
    out_data = x.data[key]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x._accumulate(full)

    return Tensor(out_data, parents=(x,), vjp=vjp)


def detach(x):
    """Cut the graph: the value flows forward, no gradient flows back."""
    if isinstance(x, Tensor):
        return Tensor(x.data)
    return x


def repeat_rows(x, k):
    """Repeat each row ``k`` times (``(B, d)`` -> ``(B*k, d)``).

    Backward sums the per-copy gradients, which is far cheaper than the
    scatter-add a fancy-index gather would need.
    """
    if not isinstance(x, Tensor):
        return np.repeat(np.asarray(x), k, axis=0)
    out_data = np.repeat(x.data, k, axis=0)

    def vjp(g):
        x._accumulate(g.reshape(x.data.shape[0], k, *x.data.shape[1:]).sum(axis=1))

    return Tensor(out_data, parents=(x,), vjp=vjp)


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.asarray(x).reshape(shape)
    out_data = x.data.reshape(shape)

    def vjp(g):
        x._accumulate(g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), vjp=vjp)


def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(np.asarray(x), axis=axis, keepdims=keepdims)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return Tensor(out_data, parents=(x,), vjp=vjp)


def mean(x, axis=None, keepdims=False):
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    n = data.size if axis is None else data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def maxpool_rows(x, groups):
    """Channelwise max over ``groups`` equal blocks of rows.

    ``x`` is ``(groups * per, C)``; returns ``(groups, C)``. Ties route
    the gradient to the first (lowest row index) maximizer, and the
    forward value is exactly invariant to row permutation/duplication
    within a group.
    """
    if not isinstance(x, Tensor):
        v = np.asarray(x)
        return v.reshape(groups, -1, v.shape[-1]).max(axis=1)
    per = x.data.shape[0] // groups
    blocks = x.data.reshape(groups, per, -1)
    winner = np.argmax(blocks, axis=1)
    out_data = np.take_along_axis(blocks, winner[:, None, :], axis=1)[:, 0, :]

    def vjp(g):
        full = np.zeros_like(blocks)
        np.put_along_axis(full, winner[:, None, :], g[:, None, :], axis=1)
        x._accumulate(full.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), vjp=vjp)


def smallest_k(x, k):
    """Mean of the ``k`` smallest entries of a vector.

    The sort is frozen during backward: gradient reaches exactly the
    selected entries (stable order, ties kept by original index).
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not 0 <= k <= data.size:
        raise ValueError(f"k={k} out of range for size {data.size}")
    if k == 0:
        return Tensor(np.zeros((), dtype=data.dtype)) if isinstance(x, Tensor) else np.zeros(())
    idx = np.argsort(data, kind="stable")[:k]
    return mean(take(x, idx))


def norm_rows(p):
    """Euclidean norm of each row of an ``(N, 3)`` array of points."""
    return sqrt(sum_(square(p), axis=1))


class Dense:
    """Fully connected layer ``y = x W + b`` with U(+-1/sqrt(fan_in)) init.

    ``init_scale`` shrinks the initial weights; SDF output heads use a
    small scale so initial predictions sit inside the clamp band, where
    the truncated losses actually carry gradient.
    """

    def __init__(self, in_dim, out_dim, rng, name, dtype=np.float64, init_scale=1.0):
        bound = init_scale / np.sqrt(in_dim)
        self.W = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype), f"{name}.W")
        self.b = Parameter(rng.uniform(-bound, bound, size=(out_dim,)).astype(dtype), f"{name}.b")
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x):
        n_in = x.shape[-1]
        if n_in != self.in_dim:
            raise ValueError(f"dense layer {self.W.name}: expected input width {self.in_dim}, got {n_in}")
        if isinstance(x, Tensor):
            return add(matmul(x, self.W), self.b)
        return x @ self.W.data + self.b.data

    def parameters(self):
        return [self.W, self.b]


class Adam:
    """Bias-corrected Adam over a list of Parameters, one state each.

    Parameters flagged ``sparse_rows`` keep a per-row step counter and
    update only rows with a nonzero gradient, so a latent vector's state
    only advances when its shape is in the batch.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = [
            np.zeros(p.data.shape[0], dtype=np.int64) if p.sparse_rows else 0 for p in self.params
        ]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
            m, v = self._m[i], self._v[i]
            if p.sparse_rows:
                rows = np.flatnonzero(np.any(g != 0.0, axis=tuple(range(1, g.ndim))))
                if rows.size == 0:
                    continue
                self._t[i][rows] += 1
                t = self._t[i][rows].reshape((-1,) + (1,) * (g.ndim - 1))
                m[rows] = self.beta1 * m[rows] + (1 - self.beta1) * g[rows]
                v[rows] = self.beta2 * v[rows] + (1 - self.beta2) * g[rows] ** 2
                m_hat = m[rows] / (1 - self.beta1**t)
                v_hat = v[rows] / (1 - self.beta2**t)
                p.data[rows] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            else:
                self._t[i] += 1
                t = self._t[i]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g**2
                m_hat = m / (1 - self.beta1**t)
                v_hat = v / (1 - self.beta2**t)
                p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def save_checkpoint(path, params, meta):
    """Write all parameter arrays plus a JSON meta block to one .npz file."""
    arrays = {}
    for p in params:
        if p.name in arrays:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = p.data
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Read back ``(arrays_by_name, meta)``; rejects unknown format versions."""
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
        meta = json.loads(npz["__meta__"].tobytes().decode("utf-8"))
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version!r}")
    return arrays, meta
