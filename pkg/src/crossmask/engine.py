"""Dense float64 tensors with recorded reverse-mode gradients.

Every primitive validates its inputs, checks the output for NaN/Inf, and
records (parents, vjp closures) on the result tensor. `Tensor.backward`
walks the recorded graph once in reverse topological order and accumulates
gradients into `requires_grad` leaves. 64-bit only: the hyperbolic maps
downstream amplify rounding near the ball boundary and 32-bit does not
survive the finite-difference checks.

Reductions use numpy's sequential row-major order, so results are
bit-reproducible for a fixed input.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class EngineError(ValueError):
    """Base class for tensor-engine failures."""


class ShapeError(EngineError):
    """Operand shapes do not conform for the named primitive."""


class DomainError(EngineError):
    """Input outside the mathematical domain of the named primitive."""


class GraphError(RuntimeError):
    """Backward-pass misuse: non-scalar loss or repeated traversal."""


_ATANH_LIMIT = 1.0 - 1e-12
_atanh_clamps = 0


def atanh_clamp_count() -> int:
    """Number of atanh inputs clamped to the open interval so far."""
    return _atanh_clamps


def reset_atanh_clamp_count() -> None:
    global _atanh_clamps
    _atanh_clamps = 0


def clamp_atanh_input(x: np.ndarray) -> np.ndarray:
    """Clamp |x| to 1 - 1e-12, counting how many entries were clipped."""
    global _atanh_clamps
    clipped = np.clip(x, -_ATANH_LIMIT, _ATANH_LIMIT)
    n = int(np.count_nonzero(clipped != x))
    if n:
        _atanh_clamps += n
    return clipped


def _check_finite(op: str, arr: np.ndarray) -> None:
    if arr.size == 0:
        return
    lo = np.min(arr)
    hi = np.max(arr)
    # NaN fails lo == lo; +-Inf fails one of the strict bounds.
    if not (lo > -np.inf and hi < np.inf and lo == lo):
        raise EngineError(f"{op}: produced non-finite values")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A dense float64 array plus optional gradient buffer.

    Tensors produced by primitives carry links to their parents and the
    VJP closures needed for the reverse pass. Leaves created directly from
    data carry no links. Single-writer: do not mutate `data` of a tensor
    that participates in a live graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps", "_op", "_graph")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite("tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjps = ()
        self._op = None
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", op={self._op!r}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape/reduction methods -------------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def take(self, indices, axis=0):
        return take(self, indices, axis)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_pool(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


class Graph:
    """Reverse-topological record of the primitives reachable from a root.

    Built once per backward pass; every node's inputs precede it in
    `order`. A graph may be traversed exactly once.
    """

    def __init__(self, root: Tensor):
        order = []
        seen = set()
        stack = [(root, False)]
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
                if parent.requires_grad:
                    stack.append((parent, False))
        self.root = root
        self.order = order
        self.consumed = False

    def run(self) -> None:
        if self.consumed:
            raise GraphError("backward: graph already traversed")
        self.consumed = True
        grads = {id(self.root): np.ones((), dtype=np.float64)}
        for node in reversed(self.order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def backward(loss: Tensor) -> Graph:
    """Populate gradients of every requires_grad leaf under `loss`.

    `loss` must be a scalar. A second backward through the same loss is an
    error: build a new forward graph per step instead.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward: loss must be a Tensor")
    if loss.data.shape != ():
        raise GraphError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._graph is not None:
        raise GraphError("backward: this loss was already traversed")
    graph = Graph(loss)
    loss._graph = graph
    graph.run()
    return graph


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, op: str, links) -> Tensor:
    """Create an op output, keeping only links to grad-requiring parents."""
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._graph = None
    out._op = op
    live = tuple((p, v) for p, v in links if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = tuple(p for p, _ in live)
        out._vjps = tuple(v for _, v in live)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjps = ()
    return out


# -- elementwise primitives --------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (covers broadcast-add)."""
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    return _result(data, "add", [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def neg(a) -> Tensor:
    a = _wrap(a)
    return _result(-a.data, "neg", [(a, lambda g: -g)])


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"multiply: {a.shape} vs {b.shape}") from exc
    return _result(data, "multiply", [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"divide: {a.shape} vs {b.shape}") from exc
    return _result(data, "divide", [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)
    return _result(t, "tanh", [(a, lambda g: g * (1.0 - t * t))])


def cosh(a) -> Tensor:
    a = _wrap(a)
    return _result(np.cosh(a.data), "cosh", [(a, lambda g: g * np.sinh(a.data))])


def atanh(a) -> Tensor:
    """Inverse hyperbolic tangent with counted clamping at |x| = 1 - 1e-12."""
    a = _wrap(a)
    if not np.all(np.isfinite(a.data)):
        raise DomainError("atanh: non-finite input")
    clipped = clamp_atanh_input(a.data)
    out = np.arctanh(clipped)
    return _result(out, "atanh", [(a, lambda g: g / (1.0 - clipped * clipped))])


def tanhc(a) -> Tensor:
    """tanh(x)/x with the removable singularity at 0 filled by its limit 1.

    Smooth everywhere; used to evaluate tanh(s*|x|)*x/(s*|x|) without a
    division by zero at the origin.
    """
    a = _wrap(a)
    x = a.data
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 - x * x / 3.0 + 2.0 * x ** 4 / 15.0, np.tanh(safe) / safe)

    def vjp(g):
        sech2 = 1.0 - np.tanh(safe) ** 2
        direct = sech2 / safe - np.tanh(safe) / (safe * safe)
        series = -2.0 * x / 3.0 + 8.0 * x ** 3 / 15.0
        return g * np.where(small, series, direct)

    return _result(out, "tanhc", [(a, vjp)])


def gelu(a) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    a = _wrap(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out = x * phi

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return g * (phi + x * pdf)

    return _result(out, "gelu", [(a, vjp)])


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; stacks of matrices follow numpy batching rules."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc
    return _result(data, "matmul", [
        (a, lambda g: _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)),
        (b, lambda g: _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)),
    ])


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result(a.data.transpose(axes), "transpose",
                   [(a, lambda g: g.transpose(inverse))])


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc
    old = a.data.shape
    return _result(data, "reshape", [(a, lambda g: g.reshape(old))])


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    links = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        links.append((t, vjp))
    return _result(data, "concat", links)


# -- indexing ------------------------------------------------------------------


def take(a, indices, axis=0) -> Tensor:
    """Gather slices along `axis` by a fixed integer index array."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ShapeError(f"gather: index out of range for axis {axis} of {a.shape}")
    data = np.take(a.data, idx, axis=axis)
    src_shape = a.data.shape

    def vjp(g):
        out = np.zeros(src_shape, dtype=np.float64)
        key = (slice(None),) * axis + (idx,)
        np.add.at(out, key, g)
        return out

    return _result(data, "gather", [(a, vjp)])


def gather_rows(a, indices) -> Tensor:
    """Per-sample row gather: a [N, T, C], indices [N, m] -> [N, m, C]."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"gather: rows {a.shape} with indices {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError("gather: index out of range")
    data = np.take_along_axis(a.data, idx[:, :, None], axis=1)
    n = a.shape[0]
    src_shape = a.data.shape

    def vjp(g):
        out = np.zeros(src_shape, dtype=np.float64)
        np.add.at(out, (np.arange(n)[:, None], idx), g)
        return out

    return _result(data, "gather", [(a, vjp)])


def scatter_rows(updates, indices, length: int) -> Tensor:
    """Per-sample row scatter into zeros: updates [N, m, C], indices [N, m].

    Indices must be distinct within each sample; rows not addressed stay 0.
    """
    u = _wrap(updates)
    idx = np.asarray(indices, dtype=np.int64)
    if u.ndim != 3 or idx.shape != u.shape[:2]:
        raise ShapeError(f"scatter: updates {u.shape} with indices {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= length):
        raise ShapeError("scatter: index out of range")
    for row in idx:
        if len(np.unique(row)) != len(row):
            raise ShapeError("scatter: duplicate indices within a sample")
    n, _, c = u.shape
    data = np.zeros((n, length, c), dtype=np.float64)
    np.put_along_axis(data, idx[:, :, None], u.data, axis=1)

    def vjp(g):
        return np.take_along_axis(g, idx[:, :, None], axis=1)

    return _result(data, "scatter", [(u, vjp)])


# -- reductions and normalizers -------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _result(np.asarray(data), "sum", [(a, vjp)])


def mean_pool(a, axis=None, keepdims=False) -> Tensor:
    """Arithmetic mean over `axis` (None pools everything)."""
    a = _wrap(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([shape[ax] for ax in axis]))
    else:
        count = shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / count, shape).copy()

    return _result(np.asarray(data), "mean", [(a, vjp)])


def l2norm(a, keepdims=False) -> Tensor:
    """Euclidean norm over the last axis; subgradient 0 at the origin."""
    a = _wrap(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=keepdims))

    def vjp(g):
        nk = n if keepdims else n[..., None]
        gk = g if keepdims else g[..., None]
        safe = np.where(nk == 0.0, 1.0, nk)
        return np.where(nk == 0.0, 0.0, gk * a.data / safe)

    return _result(n, "l2norm", [(a, vjp)])


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return s * (g - np.sum(g * s, axis=-1, keepdims=True))

    return _result(s, "softmax", [(a, vjp)])


def log_softmax(a) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g):
        return g - s * np.sum(g, axis=-1, keepdims=True)

    return _result(out, "log_softmax", [(a, vjp)])


_LN_EPS = 1e-8


def layer_norm(a, eps: float = _LN_EPS) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis.

    Affine scale/shift are not part of the primitive; compose with
    multiply/add when learnable parameters are wanted.
    """
    a = _wrap(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = np.mean(g * xhat, axis=-1, keepdims=True)
        return inv * (g - gm - xhat * gx)

    return _result(xhat, "layer_norm", [(a, vjp)])


# -- convolution ---------------------------------------------------------------


def conv1d(x, w, b=None, stride: int = 1) -> Tensor:
    """Strided 1-D convolution over time.

    x: [B, T, C_in], w: [K, C_in, C_out], b: [C_out] or None.
    Output [B, T', C_out] with T' = (T - K) // stride + 1.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: x {x.shape}, w {w.shape}")
    k, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv1d: channels {x.shape[-1]} != {cin}")
    if stride < 1:
        raise ShapeError("conv1d: stride must be >= 1")
    t = x.shape[1]
    if k > t:
        raise ShapeError(f"conv1d: kernel {k} longer than input {t}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)[:, ::stride]
    # windows: [B, T', C_in, K]
    data = np.einsum("btck,kco->bto", windows, w.data, optimize=True)
    tp = data.shape[1]
    links = [
        (x, None),  # replaced below
        (w, lambda g: np.einsum("btck,bto->kco", windows, g, optimize=True)),
    ]

    def vjp_x(g):
        gx = np.zeros_like(x.data)
        positions = stride * np.arange(tp)
        for kk in range(k):
            gx[:, positions + kk] += g @ w.data[kk].T
        return gx

    links[0] = (x, vjp_x)
    if b is not None:
        b = _wrap(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv1d: bias {b.shape} != ({cout},)")
        data = data + b.data
        links.append((b, lambda g: g.sum(axis=(0, 1))))
    return _result(data, "conv1d", links)


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with the caller's generator; rate 0 is the identity."""
    a = _wrap(a)
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise DomainError("dropout: rate must be < 1")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _result(a.data * mask, "dropout", [(a, lambda g: g * mask)])


# -- verification harness --------------------------------------------------------


def finite_diff_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must map the leaf `x` to a scalar Tensor, deterministically; two
    forward evaluations that disagree raise. Relative error per coordinate
    is |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    if eps <= 0:
        raise DomainError("finite_diff_check: eps must be positive")
    y0 = f(x)
    y1 = f(x)
    if y0.data.shape != () or y1.data.shape != ():
        raise GraphError("finite_diff_check: f must return a scalar")
    if not np.array_equal(y0.data, y1.data):
        raise EngineError("finite_diff_check: f is not deterministic")
    x.zero_grad()
    backward(y1)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    for idx in np.ndindex(x.data.shape):
        orig = x.data[idx]
        x.data[idx] = orig + eps
        hi = f(x).item()
        x.data[idx] = orig - eps
        lo = f(x).item()
        x.data[idx] = orig
        numeric[idx] = (hi - lo) / (2.0 * eps)

    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0
