"""Minimal reverse-mode differentiation over dense numpy arrays.

Design points:

  * every op is a module-level function producing a new Tensor; the graph
    is implicit in parent links, and creation order is a valid topological
    order (an op's output is always created after its inputs);
  * backward() REPLACES gradients (no cross-call accumulation), seeds the
    scalar loss with 1, and walks nodes in reverse creation order;
  * every forward op verifies its output is finite and raises
    NonFiniteError otherwise, so numeric blowups surface at the op that
    caused them;
  * single precision is the training default; tests build float64 tensors
    and everything stays in the input dtype (no silent upcasts);
  * no general broadcasting. The few mixed-shape patterns that the models
    need (bias rows, row means, sparse operators) are dedicated ops with
    hand-written backward rules.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NonFiniteError

_UID = itertools.count()


def _ensure_finite(op: str, data: np.ndarray):
    if not np.isfinite(data).all():
        bad = int(data.size - np.isfinite(data).sum())
        raise NonFiniteError(f"{op} produced {bad} non-finite value(s)")


class Tensor:
    """A dense array plus the links needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_uid")

    def __init__(self, data, requires_grad: bool = False, _parents=(),
                 _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._uid = next(_UID)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"

    def backward(self):
        """Gradient of this scalar w.r.t. every reachable tensor.

        Overwrites .grad on all reachable tensors that require gradients;
        parameters not on any path to this loss end up with zero gradient.
        """
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that requires no gradient")
        visited = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._uid in visited:
                continue
            visited[t._uid] = t
            stack.extend(t._parents)
        order = sorted(visited.values(), key=lambda t: t._uid, reverse=True)
        for t in order:
            t.grad = np.zeros_like(t.data) if t.requires_grad else None
        self.grad = np.ones_like(self.data)
        for t in order:
            if t._backward is not None:
                t._backward(t.grad)


def _make(data, op: str, parents, backward_builder):
    """Wrap an op result; skip graph bookkeeping when nothing needs grads."""
    _ensure_finite(op, data)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents),
                  _backward=backward_builder())


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


# ---------------------------------------------------------------- linear ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g
        return bwd
    return _make(out_data, "matmul", (a, b), build)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g
        return bwd
    return _make(a.data + b.data, "add", (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad -= g
        return bwd
    return _make(a.data - b.data, "sub", (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g * b.data
            if b.requires_grad:
                b.grad += g * a.data
        return bwd
    return _make(a.data * b.data, "mul", (a, b), build)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g * s
        return bwd
    return _make(a.data * np.asarray(s, dtype=a.dtype), "scale", (a,), build)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias: x is (N, F), b is (F,)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {x.shape} + {b.shape}")

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0)
        return bwd
    return _make(x.data + b.data[None, :], "add_bias", (x, b), build)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose needs a matrix, got shape {a.shape}")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g.T
        return bwd
    return _make(a.data.T.copy(), "transpose", (a,), build)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def build():
        def bwd(g):
            if a.requires_grad:
                a.grad += g.reshape(a.shape)
        return bwd
    return _make(a.data.reshape(shape).copy(), "reshape", (a,), build)


# ----------------------------------------------------- structure/index ops

def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_rows of nothing")
    widths = {t.shape[1:] for t in tensors}
    if len(widths) != 1:
        raise ValueError(f"concat_rows column mismatch: {sorted(widths)}")
    counts = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + counts)

    def build():
        def bwd(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t.grad += g[lo:hi]
        return bwd
    return _make(np.concatenate([t.data for t in tensors], axis=0),
                 "concat_rows", tensors, build)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_cols of nothing")
    heights = {t.shape[0] for t in tensors}
    if len(heights) != 1 or any(t.data.ndim != 2 for t in tensors):
        raise ValueError("concat_cols needs matrices with equal row counts")
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def build():
        def bwd(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t.grad += g[:, lo:hi]
        return bwd
    return _make(np.concatenate([t.data for t in tensors], axis=1),
                 "concat_cols", tensors, build)


def _scatter_add_rows(out, idx, vals):
    """out[idx[k]] += vals[k] with repeats; sort+reduceat beats np.add.at."""
    if idx.size == 0:
        return
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] += np.add.reduceat(vals[order], starts, axis=0)


def gather_rows(x: Tensor, indices) -> Tensor:
    """out[..., :] = x[indices[...], :]; index -1 yields a zero row.

    `indices` may have any shape; the output shape is indices.shape + (F,).
    """
    if x.data.ndim != 2:
        raise ValueError(f"gather_rows needs a matrix, got shape {x.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("gather_rows indices must be integers")
    flat = idx.reshape(-1)
    if flat.size and (flat.min() < -1 or flat.max() >= x.shape[0]):
        raise ValueError(
            f"gather_rows index out of range for {x.shape[0]} rows")
    valid = flat >= 0
    out_data = np.zeros((flat.size, x.shape[1]), dtype=x.dtype)
    out_data[valid] = x.data[flat[valid]]
    out_data = out_data.reshape(idx.shape + (x.shape[1],))

    def build():
        def bwd(g):
            if x.requires_grad:
                gf = g.reshape(flat.size, x.shape[1])
                _scatter_add_rows(x.grad, flat[valid], gf[valid])
        return bwd
    return _make(out_data, "gather_rows", (x,), build)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[0]:
        raise ValueError(f"slice_rows[{start}:{stop}] invalid for {x.shape}")

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad[start:stop] += g
        return bwd
    return _make(x.data[start:stop].copy(), "slice_rows", (x,), build)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice_cols[{start}:{stop}] invalid for {x.shape}")

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad[:, start:stop] += g
        return bwd
    return _make(x.data[:, start:stop].copy(), "slice_cols", (x,), build)


def sparse_mm(rows: int, row_idx, col_idx, weights, x: Tensor) -> Tensor:
    """Sparse (rows x x.rows) matrix times dense features.

    The sparse matrix is given as raw COO triples; weights are constants
    (mesh operators), so only x receives gradient. The transposed pass
    reuses the same triples with rows/cols swapped.
    """
    if x.data.ndim != 2:
        raise ValueError(f"sparse_mm needs a feature matrix, got {x.shape}")
    row_idx = np.asarray(row_idx)
    col_idx = np.asarray(col_idx)
    if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= x.shape[0]):
        raise ValueError(
            f"sparse_mm column index out of range for {x.shape[0]} rows")
    w = np.asarray(weights, dtype=x.dtype)
    out_data = np.zeros((rows, x.shape[1]), dtype=x.dtype)
    _scatter_add_rows(out_data, row_idx, w[:, None] * x.data[col_idx])

    def build():
        def bwd(g):
            if x.requires_grad:
                _scatter_add_rows(x.grad, col_idx, w[:, None] * g[row_idx])
        return bwd
    return _make(out_data, "sparse_mm", (x,), build)


# ----------------------------------------------------------- nonlinearities

def elu(x: Tensor) -> Tensor:
    out_data = np.where(x.data > 0, x.data, np.expm1(x.data))

    def build():
        factor = np.where(x.data > 0,
                          np.asarray(1, dtype=x.dtype), out_data + 1)

        def bwd(g):
            if x.requires_grad:
                x.grad += g * factor
        return bwd
    return _make(out_data, "elu", (x,), build)


def sigmoid(x: Tensor) -> Tensor:
    # Branch on sign so exp never overflows.
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    out_data = np.where(pos, 1 / (1 + e), e / (1 + e))

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad += g * out_data * (1 - out_data)
        return bwd
    return _make(out_data, "sigmoid", (x,), build)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad += g * (1 - out_data * out_data)
        return bwd
    return _make(out_data, "tanh", (x,), build)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, max-shifted so large scores cannot overflow."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows needs a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def build():
        def bwd(g):
            if x.requires_grad:
                dot = (g * out_data).sum(axis=1, keepdims=True)
                x.grad += out_data * (g - dot)
        return bwd
    return _make(out_data, "softmax_rows", (x,), build)


def layernorm_rows(x: Tensor, gamma: Tensor, beta: Tensor,
                   eps: float = 1e-5) -> Tensor:
    """Per-row standardization with learned gain/shift (one fused node)."""
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) \
            or beta.shape != (x.shape[1],):
        raise ValueError(
            f"layernorm_rows shapes: x {x.shape}, gamma {gamma.shape}, "
            f"beta {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out_data = xhat * gamma.data[None, :] + beta.data[None, :]

    def build():
        def bwd(g):
            if gamma.requires_grad:
                gamma.grad += (g * xhat).sum(axis=0)
            if beta.requires_grad:
                beta.grad += g.sum(axis=0)
            if x.requires_grad:
                dxhat = g * gamma.data[None, :]
                m1 = dxhat.mean(axis=1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
                x.grad += inv * (dxhat - m1 - xhat * m2)
        return bwd
    return _make(out_data, "layernorm_rows", (x, gamma, beta), build)


# ----------------------------------------------------------- reductions

def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad += g * np.full_like(x.data, 1.0 / n)
        return bwd
    return _make(np.asarray(x.data.mean(), dtype=x.dtype), "mean", (x,), build)


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a single-row matrix (pooling over tokens)."""
    if x.data.ndim != 2:
        raise ValueError(f"mean_rows needs a matrix, got shape {x.shape}")
    n = x.shape[0]

    def build():
        def bwd(g):
            if x.requires_grad:
                x.grad += np.repeat(g, n, axis=0) / n
        return bwd
    return _make(x.data.mean(axis=0, keepdims=True), "mean_rows", (x,), build)


# ----------------------------------------------------------------- losses

def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all entries; d|0|/dx defined as 0."""
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(
            f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def build():
        sign = np.sign(diff)

        def bwd(g):
            if pred.requires_grad:
                pred.grad += g * sign / n
            if target.requires_grad:
                target.grad -= g * sign / n
        return bwd
    return _make(np.asarray(np.abs(diff).mean(), dtype=pred.dtype),
                 "l1_loss", (pred, target), build)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over the batch, via log-sum-exp."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy needs (batch, classes) logits, "
                         f"got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != logits.shape[0]:
        raise ValueError("cross_entropy needs one integer label per row")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    loss = -log_probs[np.arange(n), labels].mean()

    def build():
        probs = np.exp(log_probs)

        def bwd(g):
            if logits.requires_grad:
                d = probs.copy()
                d[np.arange(n), labels] -= 1
                logits.grad += g * d / n
        return bwd
    return _make(np.asarray(loss, dtype=logits.dtype), "cross_entropy",
                 (logits,), build)
