"""Reverse-mode automatic differentiation over small dense tensors.

A :class:`Value` wraps a float64 numpy array of rank <= 3 together with its
gradient and a link to the operation that produced it.  Graphs are built
eagerly by the operator functions below and consumed once by
:func:`backward`, which walks the graph in reverse topological order so
every node's local rule runs exactly once.  The operator set is deliberately
minimal: it contains exactly what the recognition model needs, implemented
for checkable numerics (everything is float64) rather than speed.

Graph construction is skipped entirely when no operand requires gradients,
so frozen-model inference pays no autodiff overhead.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidConfigError,
    InvalidProbabilityError,
    InvalidRootError,
    NumericError,
    ShapeError,
)

TRAIN = "train"
EVAL = "eval"

_MODES = (TRAIN, EVAL)


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise InvalidConfigError(f"mode must be one of {_MODES}, got {mode!r}")


class Value:
    """A node in the computation graph: data, gradient, and backward rule.

    ``data`` is a row-major float64 array; ``grad`` has the same shape and is
    allocated lazily (on first accumulation) for intermediate nodes, eagerly
    for leaves created with ``requires_grad=True``.  Gradients accumulate
    additively across repeated backward passes until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Value", ...] = (),
        _backward: Callable[[], None] | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported (max 3)")
        self.data = arr
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.grad: np.ndarray | None = None
        if requires_grad and not _parents:
            self.grad = np.zeros_like(arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accum(node: Value, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _node(data: np.ndarray, parents: tuple[Value, ...], backward) -> Value:
    """Create an op result, tracking the graph only if a parent needs grads."""
    if any(p.requires_grad for p in parents):
        return Value(data, requires_grad=True, _parents=parents, _backward=backward)
    return Value(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a: Value, b: Value) -> Value:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc
    out = _node(data, (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    out._backward = bw
    return out


def add_n(values: Sequence[Value]) -> Value:
    """Sum of same-shape values as a single graph node."""
    if not values:
        raise EmptyInputError("add_n of no values")
    shape = values[0].data.shape
    for v in values[1:]:
        if v.data.shape != shape:
            raise ShapeError(f"add_n: mixed shapes {shape} and {v.data.shape}")
    data = values[0].data.copy()
    for v in values[1:]:
        data += v.data
    out = _node(data, tuple(values), None)

    def bw():
        for v in values:
            if v.requires_grad:
                _accum(v, out.grad)

    out._backward = bw
    return out


def neg(a: Value) -> Value:
    out = _node(-a.data, (a,), None)

    def bw():
        if a.requires_grad:
            _accum(a, -out.grad)

    out._backward = bw
    return out


def sub(a: Value, b: Value) -> Value:
    return add(a, neg(b))


def mul(a: Value, b: Value) -> Value:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc
    out = _node(data, (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = bw
    return out


def scale(a: Value, k: float) -> Value:
    """Multiply by a constant (no gradient for ``k``)."""
    out = _node(a.data * k, (a,), None)

    def bw():
        if a.requires_grad:
            _accum(a, out.grad * k)

    out._backward = bw
    return out


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    if not values:
        raise EmptyInputError("concat of no values")
    try:
        data = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    out = _node(data, tuple(values), None)
    sizes = [v.data.shape[axis] for v in values]

    def bw():
        offset = 0
        for v, size in zip(values, sizes):
            if v.requires_grad:
                sl = [slice(None)] * data.ndim
                sl[axis] = slice(offset, offset + size)
                _accum(v, out.grad[tuple(sl)])
            offset += size

    out._backward = bw
    return out


def split_rows(x: Value, sizes: Sequence[int]) -> list[Value]:
    """Split a 2-D value into consecutive row blocks of the given sizes."""
    if x.data.ndim != 2:
        raise ShapeError("split_rows expects a 2-D operand")
    if sum(sizes) != x.data.shape[0]:
        raise ShapeError(f"split sizes {sizes} do not cover {x.data.shape[0]} rows")
    parts: list[Value] = []
    offset = 0
    for size in sizes:
        start = offset
        piece = _node(x.data[start : start + size], (x,), None)

        def bw(piece=piece, start=start, size=size):
            if x.requires_grad:
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad[start : start + size] += piece.grad

        piece._backward = bw
        parts.append(piece)
        offset += size
    return parts


def outer_sum(col: Value, row: Value) -> Value:
    """Pairwise sums ``out[i, j] = col[i] + row[j]`` of two vectors."""
    if col.data.ndim != 1 or row.data.ndim != 1:
        raise ShapeError("outer_sum expects two 1-D operands")
    out = _node(col.data[:, None] + row.data[None, :], (col, row), None)

    def bw():
        if col.requires_grad:
            _accum(col, out.grad.sum(axis=1))
        if row.requires_grad:
            _accum(row, out.grad.sum(axis=0))

    out._backward = bw
    return out


def index_scalar(x: Value, index: int) -> Value:
    """Select one element of a 1-D value as a scalar node."""
    if x.data.ndim != 1:
        raise ShapeError("index_scalar expects a 1-D operand")
    if not 0 <= index < x.data.shape[0]:
        raise ShapeError(f"index {index} out of range for length {x.data.shape[0]}")
    out = _node(np.asarray(x.data[index]), (x,), None)

    def bw():
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[index] += out.grad

    out._backward = bw
    return out


def sum_all(x: Value) -> Value:
    out = _node(np.asarray(x.data.sum()), (x,), None)

    def bw():
        if x.requires_grad:
            _accum(x, np.broadcast_to(out.grad, x.data.shape))

    out._backward = bw
    return out


def mean_rows(x: Value) -> Value:
    """Mean over the leading axis: ``[l, c] -> [c]``."""
    if x.data.ndim != 2:
        raise ShapeError("mean_rows expects a 2-D operand")
    rows = x.data.shape[0]
    out = _node(x.data.mean(axis=0), (x,), None)

    def bw():
        if x.requires_grad:
            _accum(x, np.broadcast_to(out.grad / rows, x.data.shape).copy())

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Value, b: Value) -> Value:
    """Matrix product for the 2Dx2D, 2Dx1D and 1Dx2D cases."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or (ad.ndim == 1 and bd.ndim == 1):
        raise ShapeError(f"matmul: unsupported ranks {ad.ndim} x {bd.ndim}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
        raise ShapeError(f"matmul: inner dims differ, {ad.shape} x {bd.shape}")
    out = _node(ad @ bd, (a, b), None)

    def bw():
        g = out.grad
        if ad.ndim == 2 and bd.ndim == 2:
            if a.requires_grad:
                _accum(a, g @ bd.T)
            if b.requires_grad:
                _accum(b, ad.T @ g)
        elif ad.ndim == 2:  # 2D @ 1D -> 1D
            if a.requires_grad:
                _accum(a, np.outer(g, bd))
            if b.requires_grad:
                _accum(b, ad.T @ g)
        else:  # 1D @ 2D -> 1D
            if a.requires_grad:
                _accum(a, bd @ g)
            if b.requires_grad:
                _accum(b, np.outer(ad, g))

    out._backward = bw
    return out


def linear(x: Value, weight: Value, bias: Value | None = None) -> Value:
    """Affine map ``x @ weight + bias`` for 1-D or 2-D ``x``."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# neural-network ops
# ---------------------------------------------------------------------------


def conv1d(x: Value, kernel: Value, stride: int = 1, padding: int = 0) -> Value:
    """1-D convolution of a ``[T, Cin]`` sequence with a ``[Cout, Cin, K]`` kernel.

    Output length is ``floor((T + 2*padding - K) / stride) + 1``.  The kernel
    must span the padded input (``K <= T + 2*padding``) and stride is limited
    to 1 or 2, which is all the encoder uses.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ShapeError(
            f"conv1d expects [T, Cin] input and [Cout, Cin, K] kernel, "
            f"got {x.shape} and {kernel.shape}"
        )
    t_in, c_in = x.data.shape
    c_out, kc_in, k = kernel.data.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, kernel expects {kc_in}")
    if stride not in (1, 2):
        raise InvalidConfigError(f"conv1d stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise InvalidConfigError(f"conv1d padding must be >= 0, got {padding}")
    if k > t_in + 2 * padding:
        raise ShapeError(f"conv1d: kernel size {k} exceeds padded length {t_in + 2 * padding}")

    if padding:
        xp = np.zeros((t_in + 2 * padding, c_in))
        xp[padding : padding + t_in] = x.data
    else:
        xp = x.data
    t_out = (t_in + 2 * padding - k) // stride + 1
    idx = stride * np.arange(t_out)[:, None] + np.arange(k)[None, :]
    windows = xp[idx].reshape(t_out, k * c_in)  # row t is [x(t), ..., x(t+k-1)]
    kernel2d = kernel.data.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = _node(windows @ kernel2d, (x, kernel), None)

    def bw():
        g = out.grad  # [t_out, c_out]
        if kernel.requires_grad:
            dk2d = windows.T @ g  # [k*c_in, c_out]
            _accum(kernel, dk2d.reshape(k, c_in, c_out).transpose(2, 1, 0))
        if x.requires_grad:
            dwin = (g @ kernel2d.T).reshape(t_out, k, c_in)
            dxp = np.zeros_like(xp)
            base = stride * np.arange(t_out)
            for kk in range(k):
                # row indices are distinct within one kk, so += is safe
                dxp[base + kk] += dwin[:, kk, :]
            _accum(x, dxp[padding : padding + t_in] if padding else dxp)

    out._backward = bw
    return out


class BatchNormStats:
    """Running mean/variance buffers for one batch-norm layer."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)

    def copy(self) -> "BatchNormStats":
        fresh = BatchNormStats(self.mean.shape[0])
        fresh.mean = self.mean.copy()
        fresh.var = self.var.copy()
        return fresh


def batch_norm1d(
    x: Value,
    gamma: Value,
    beta: Value,
    stats: BatchNormStats,
    mode: str = TRAIN,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Value:
    """Normalize ``[T, C]`` over the time axis; affine rescale by gamma/beta.

    Train mode normalizes with the current batch statistics and folds them
    into the running buffers by exponential moving average; eval mode uses
    the running buffers and leaves them untouched.
    """
    _check_mode(mode)
    if x.data.ndim != 2:
        raise ShapeError("batch_norm1d expects a [T, C] operand")
    t, c = x.data.shape
    if t == 0:
        raise EmptyInputError("batch_norm1d over an empty sequence")
    if eps <= 0:
        raise InvalidConfigError(f"batch_norm1d eps must be > 0, got {eps}")

    if mode == TRAIN:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        stats.mean += momentum * (mu - stats.mean)
        stats.var += momentum * (var - stats.var)
    else:
        mu = stats.mean
        var = stats.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _node(gamma.data * xhat + beta.data, (x, gamma, beta), None)

    def bw():
        g = out.grad
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            if mode == TRAIN:
                # gradient through the batch mean and variance
                dx = (inv / t) * (
                    t * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dx = dxhat * inv
            _accum(x, dx)

    out._backward = bw
    return out


def prelu(x: Value, slope: Value) -> Value:
    """Parametric ReLU; the slope is scalar or per-channel on the last axis.

    The derivative at exactly zero follows the positive branch.
    """
    s = slope.data
    if s.ndim > 1 or (s.ndim == 1 and x.data.ndim >= 1 and s.shape[0] != x.data.shape[-1]):
        raise ShapeError(
            f"prelu slope must be scalar or match the last axis, "
            f"got slope {s.shape} for input {x.shape}"
        )
    pos = x.data >= 0
    out = _node(np.where(pos, x.data, s * x.data), (x, slope), None)

    def bw():
        g = out.grad
        if x.requires_grad:
            _accum(x, g * np.where(pos, 1.0, s * np.ones_like(x.data)))
        if slope.requires_grad:
            contrib = np.where(pos, 0.0, x.data) * g
            if s.ndim == 0:
                _accum(slope, np.asarray(contrib.sum()))
            else:
                axes = tuple(range(contrib.ndim - 1))
                _accum(slope, contrib.sum(axis=axes) if axes else contrib)

    out._backward = bw
    return out


def leaky_relu(x: Value, negative_slope: float = 0.2) -> Value:
    pos = x.data >= 0
    out = _node(np.where(pos, x.data, negative_slope * x.data), (x,), None)

    def bw():
        if x.requires_grad:
            _accum(x, out.grad * np.where(pos, 1.0, negative_slope))

    out._backward = bw
    return out


def dropout(x: Value, p: float, mode: str = TRAIN, rng: np.random.Generator | None = None) -> Value:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise InvalidProbabilityError(f"dropout probability must be in [0, 1), got {p}")
    if mode == EVAL or p == 0.0:
        return x
    if rng is None:
        raise InvalidConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = _node(x.data * keep, (x,), None)

    def bw():
        if x.requires_grad:
            _accum(x, out.grad * keep)

    out._backward = bw
    return out


def softmax(x: Value, axis: int = -1) -> Value:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _node(s, (x,), None)

    def bw():
        if x.requires_grad:
            g = out.grad
            _accum(x, (g - (g * s).sum(axis=axis, keepdims=True)) * s)

    out._backward = bw
    return out


def log_softmax(x: Value, axis: int = -1) -> Value:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _node(ls, (x,), None)

    def bw():
        if x.requires_grad:
            g = out.grad
            _accum(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    out._backward = bw
    return out


def cross_entropy(logits: Value, target: int) -> Value:
    """Negative log-likelihood of ``target`` under softmax(logits)."""
    return neg(index_scalar(log_softmax(logits), target))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into every ancestor of a scalar root."""
    if root.data.size != 1:
        raise InvalidRootError(f"backward root must be scalar, got shape {root.shape}")
    topo: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    _accum(root, np.ones_like(root.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# parameters and gradient checking
# ---------------------------------------------------------------------------


class ParameterSet:
    """Named map from dot-separated paths to trainable Values.

    Iteration order is always sorted by path, which keeps optimizer updates
    and serialization deterministic.
    """

    def __init__(self):
        self._params: dict[str, Value] = {}

    def add(self, path: str, data) -> Value:
        if path in self._params:
            raise InvalidConfigError(f"duplicate parameter path {path!r}")
        value = data if isinstance(data, Value) else Value(data, requires_grad=True)
        if not value.requires_grad:
            raise InvalidConfigError(f"parameter {path!r} must require gradients")
        self._params[path] = value
        return value

    def __getitem__(self, path: str) -> Value:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Value]]:
        for path in sorted(self._params):
            yield path, self._params[path]

    def zero_grad(self) -> None:
        for _, v in self.items():
            v.zero_grad()

    def num_elements(self) -> int:
        return sum(v.data.size for v in self._params.values())


def grad_check(
    f: Callable[[ParameterSet], Value],
    params: ParameterSet,
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of ``f(params)`` against central differences.

    Returns the max over all parameter elements of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  ``f`` must be
    deterministic given the parameters (dropout off or with a fixed mask).
    """
    params.zero_grad()
    out = f(params)
    if out.data.size != 1:
        raise InvalidRootError("grad_check target must be scalar")
    backward(out)
    analytic = {path: np.array(v.grad, copy=True) for path, v in params.items()}

    worst = 0.0
    for path, v in params.items():
        flat = v.data.reshape(-1)
        flat_analytic = analytic[path].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(params).data)
            flat[i] = orig - eps
            f_minus = float(f(params).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = flat_analytic[i]
            if not (np.isfinite(a) and np.isfinite(numeric)):
                raise NumericError(f"non-finite gradient while checking {path}[{i}]")
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
