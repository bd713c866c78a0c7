"""Minimal reverse-mode autodiff on numpy arrays.

Exactly the primitives the graph encoder, policy heads and losses need:
dense ops, segment ops for packed graph batches, and a finite-difference
gradient checker.  Tapes are built implicitly through parent links and
replayed in reverse topological order; accumulation is additive.  No
broadcasting beyond row-vector bias addition; every rule is auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class no_grad:
    """Context manager: ops inside record no tape (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.name = name
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value in backward seed")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def stop_grad(t: Tensor) -> Tensor:
    return Tensor(t.data, requires_grad=False)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE)
    else:
        t.grad += g


def _node(data, parents, backward) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=tuple(parents), backward=backward)


def _check_2d(*ts):
    for t in ts:
        if t.data.ndim != 2:
            raise ValueError(f"expected 2-D tensor, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# Dense primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), back)


def scalar_mul(c: float, a: Tensor) -> Tensor:
    c = float(c)

    def back(g):
        _accum(a, c * g)

    return _node(c * a.data, (a,), back)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias: a (n, d) + b (d,). The only broadcast allowed."""
    _check_2d(a)
    if b.data.shape != (a.data.shape[1],):
        raise ValueError(f"bias shape {b.data.shape} vs rows of {a.data.shape}")

    def back(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0))

    return _node(a.data + b.data[None, :], (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d(a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} x {b.data.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), back)


def row_concat(parts: list[Tensor]) -> Tensor:
    _check_2d(*parts)
    sizes = [p.data.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=0)):
            _accum(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), back)


def col_concat(parts: list[Tensor]) -> Tensor:
    _check_2d(*parts)
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=1)):
            _accum(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


def _scatter_add(acc: np.ndarray, idx: np.ndarray, g: np.ndarray):
    """acc[idx] += g with repeated indices; one flat bincount pass."""
    n, d = acc.shape
    flat = (idx[:, None] * d + np.arange(d)).ravel()
    acc += np.bincount(flat, weights=g.ravel(), minlength=n * d).reshape(n, d)


def gather_rows(a: Tensor, idx) -> Tensor:
    _check_2d(a)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            _scatter_add(a.grad, idx, g)

    return _node(a.data[idx], (a,), back)


def row_scale(a: Tensor, s: Tensor) -> Tensor:
    """Scale each row of a (n, d) by the matching entry of s (n, 1)."""
    _check_2d(a, s)
    if s.data.shape != (a.data.shape[0], 1):
        raise ValueError(f"row_scale wants s of shape ({a.data.shape[0]}, 1)")

    def back(g):
        _accum(a, g * s.data)
        _accum(s, (g * a.data).sum(axis=1, keepdims=True))

    return _node(a.data * s.data, (a, s), back)


def row_sum(a: Tensor) -> Tensor:
    _check_2d(a)

    def back(g):
        _accum(a, np.repeat(g, a.data.shape[1], axis=1))

    return _node(a.data.sum(axis=1, keepdims=True), (a,), back)


def reduce_sum(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), back)


def reduce_mean(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def back(g):
        _accum(a, np.full_like(a.data, float(g) * inv))

    return _node(a.data.mean(), (a,), back)


def row_softmax(a: Tensor) -> Tensor:
    _check_2d(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _accum(a, p * (g - dot))

    return _node(p, (a,), back)


_ACTIVATIONS = {
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
    "leaky_relu": (
        lambda x: np.where(x > 0.0, x, 0.01 * x),
        lambda x, y: np.where(x > 0.0, 1.0, 0.01),
    ),
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda x, y: (x > 0.0).astype(DTYPE),
    ),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "exp": (np.exp, lambda x, y: y),
    "log": (np.log, lambda x, y: 1.0 / x),
    "sqrt": (np.sqrt, lambda x, y: 0.5 / y),
}


def elementwise_activation(a: Tensor, kind: str) -> Tensor:
    try:
        fwd, dfn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; have {sorted(_ACTIVATIONS)}")
    y = fwd(a.data)

    def back(g):
        _accum(a, g * dfn(a.data, y))

    return _node(y, (a,), back)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def back(g):
        _accum(a, g * mask)

    return _node(y, (a,), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    if a.data.shape != b.data.shape:
        raise ValueError("minimum shape mismatch")
    take_a = a.data <= b.data

    def back(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _node(np.minimum(a.data, b.data), (a, b), back)


# ---------------------------------------------------------------------------
# Segment primitives (packed graph batches)
# ---------------------------------------------------------------------------

class SegSpec:
    """Reduceat boundaries for a NONDECREASING segment index vector.

    Precomputing this once per packed batch turns every segment reduction
    into a single ufunc.reduceat call.
    """

    def __init__(self, seg: np.ndarray, n_segments: int):
        seg = np.asarray(seg, dtype=np.intp)
        if seg.size and np.any(seg[1:] < seg[:-1]):
            raise ValueError("SegSpec needs a sorted segment vector")
        self.seg = seg
        self.n = n_segments
        self.starts = np.searchsorted(seg, np.arange(n_segments))
        ends = np.append(self.starts[1:], seg.size)
        self.counts = (ends - self.starts).astype(DTYPE)
        self.empty = self.counts == 0
        # reduceat boundaries for the non-empty segments only: empty segments
        # contribute no rows, so consecutive non-empty starts still delimit
        # exactly the right slices (and a clipped boundary would corrupt the
        # preceding segment)
        self.nonempty = ~self.empty
        self.ne_starts = self.starts[self.nonempty]


def _seg_check(a: Tensor, seg: np.ndarray, n_segments: int):
    if a.data.shape[0] != seg.shape[0]:
        raise ValueError("segment index length mismatch")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ValueError("segment index out of range")


def _seg_sum_data(x: np.ndarray, seg: np.ndarray, m: int,
                  spec: SegSpec | None = None) -> np.ndarray:
    if x.shape[0] == 0:
        return np.zeros((m, x.shape[1]), dtype=DTYPE)
    if spec is not None:
        out = np.zeros((m, x.shape[1]), dtype=DTYPE)
        if spec.ne_starts.size:
            out[spec.nonempty] = np.add.reduceat(x, spec.ne_starts, axis=0)
        return out
    out = np.empty((m, x.shape[1]), dtype=DTYPE)
    for j in range(x.shape[1]):
        out[:, j] = np.bincount(seg, weights=x[:, j], minlength=m)
    return out


def _seg_max_data(x: np.ndarray, seg: np.ndarray, m: int,
                  spec: SegSpec | None = None) -> np.ndarray:
    if spec is not None and x.shape[0]:
        out = np.full(m, -np.inf)
        if spec.ne_starts.size:
            out[spec.nonempty] = np.maximum.reduceat(x, spec.ne_starts)
        return out
    out = np.full(m, -np.inf)
    np.maximum.at(out, seg, x)
    return out


def segment_sum(a: Tensor, seg, n_segments: int,
                spec: SegSpec | None = None) -> Tensor:
    _check_2d(a)
    seg = np.asarray(seg, dtype=np.intp)
    _seg_check(a, seg, n_segments)

    def back(g):
        _accum(a, g[seg])

    return _node(_seg_sum_data(a.data, seg, n_segments, spec), (a,), back)


def segment_mean(a: Tensor, seg, n_segments: int,
                 spec: SegSpec | None = None) -> Tensor:
    """Mean per segment; empty segments yield zero rows."""
    _check_2d(a)
    seg = np.asarray(seg, dtype=np.intp)
    _seg_check(a, seg, n_segments)
    if spec is not None:
        counts = spec.counts
    else:
        counts = np.bincount(seg, minlength=n_segments).astype(DTYPE)
    safe = np.maximum(counts, 1.0)

    def back(g):
        _accum(a, (g / safe[:, None])[seg])

    return _node(_seg_sum_data(a.data, seg, n_segments, spec) / safe[:, None],
                 (a,), back)


def segment_softmax(a: Tensor, seg, n_segments: int,
                    spec: SegSpec | None = None) -> Tensor:
    """Softmax within each segment over a column vector (n, 1).

    Empty segments are fine (no rows); a singleton segment yields 1.0.
    """
    _check_2d(a)
    if a.data.shape[1] != 1:
        raise ValueError("segment_softmax expects a column vector")
    seg = np.asarray(seg, dtype=np.intp)
    _seg_check(a, seg, n_segments)
    x = a.data[:, 0]
    mx = _seg_max_data(x, seg, n_segments, spec)
    e = (np.exp(x - mx[seg]))[:, None]
    tot = _seg_sum_data(e, seg, n_segments, spec)
    p = e / tot[seg]

    def back(g):
        dot = _seg_sum_data(g * p, seg, n_segments, spec)
        _accum(a, p * (g - dot[seg]))

    return _node(p, (a,), back)


class SparseMatrix:
    """Constant sparse matrix with both row- and column-sorted layouts so
    forward and backward products are single reduceat passes."""

    def __init__(self, rows, cols, vals, n_rows: int, n_cols: int,
                 presorted_col_perm: np.ndarray | None = None):
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        vals = np.asarray(vals, dtype=DTYPE)
        if presorted_col_perm is None:
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            csort = np.lexsort((rows, cols))
        else:
            csort = presorted_col_perm  # entries already row-sorted
        self.rows, self.cols, self.vals = rows, cols, vals
        self.n_rows, self.n_cols = n_rows, n_cols
        self.row_spec = SegSpec(self.rows, n_rows)
        self._c_perm = csort
        self._c_cols = self.cols[csort]
        self.col_spec = SegSpec(self._c_cols, n_cols)


def sparse_matmul(sp: SparseMatrix, a: Tensor) -> Tensor:
    """out[r] += v * a[c] for a constant sparse matrix."""
    _check_2d(a)
    if a.data.shape[0] != sp.n_cols:
        raise ValueError("sparse_matmul: column count mismatch")
    scaled = a.data[sp.cols] * sp.vals[:, None]
    out = _seg_sum_data(scaled, sp.rows, sp.n_rows, sp.row_spec)

    def back(g):
        contrib = (g[sp.rows] * sp.vals[:, None])[sp._c_perm]
        _accum(a, _seg_sum_data(contrib, sp._c_cols, sp.n_cols, sp.col_spec))

    return _node(out, (a,), back)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive-moment gradient descent over named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        if self.lr == 0.0:
            return
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    flagged: list[tuple] = field(default_factory=list)
    analytic: np.ndarray = None  # type: ignore[assignment]
    numeric: np.ndarray = None  # type: ignore[assignment]


def grad_check(f, x: Tensor, h: float = 1e-6, tol: float = 1e-4,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f(x) with central differences.

    Coordinates where the analytic gradient is exactly zero but the numeric
    one is not (a kink straddled by the stencil, e.g. a dead rectifier) are
    flagged and excluded from the pass/fail decision.
    """
    x.grad = None
    y = f(x)
    if y.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(y.data).all():
        raise FloatingPointError("non-finite function value")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            yp = float(f(x).data)
        flat[i] = orig - h
        with no_grad():
            ym = float(f(x).data)
        flat[i] = orig
        if not (math.isfinite(yp) and math.isfinite(ym)):
            raise FloatingPointError("non-finite value during finite differences")
        nflat[i] = (yp - ym) / (2.0 * h)

    aflat = analytic.reshape(-1)
    max_err = 0.0
    flagged = []
    for i in range(flat.size):
        a, b = aflat[i], nflat[i]
        err = abs(a - b) / max(abs(a), abs(b), floor)
        if a == 0.0 and err >= tol:
            flagged.append(np.unravel_index(i, x.data.shape))
            continue
        max_err = max(max_err, err)
    return GradCheckReport(
        max_rel_err=max_err,
        passed=max_err < tol,
        flagged=flagged,
        analytic=analytic,
        numeric=numeric,
    )
