"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

Every objective in the package is assembled from the operations here, and
every backward rule is certified by central finite differences through
`grad_check`. The graph is a one-shot tape: building ops records parents
and a backward closure, `backward(loss)` replays them in reverse
topological order, and the whole structure is garbage once the references
drop.

Scope is deliberately narrow: 2-D only, float64 only, and no broadcasting
beyond scalar-times-tensor and row-vector bias addition.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateEmbeddingError, DivergenceError, DomainError, ShapeError


class Tensor:
    """A dense 2-D array node in the computation graph.

    `data` is read-only once constructed; operations always produce fresh
    tensors. `grad` stays None until `backward` reaches the node.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)
        out.data = arr
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @classmethod
    def zeros(cls, rows: int, cols: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros((rows, cols)), requires_grad)

    @classmethod
    def scalar(cls, value: float) -> "Tensor":
        return cls(np.array([[float(value)]]))

    # -- bookkeeping -----------------------------------------------------------

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out.op = "detach"
        return out

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient accumulated by the last backward; exact zeros if the
        node never appeared in the loss graph."""
        if self.grad is None:
            return np.zeros(self.data.shape)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operations ------------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.cols != other.rows:
            raise ShapeError(f"matmul inner dims disagree: {self.shape} @ {other.shape}")
        a, b = self, other

        def bw(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        return Tensor._from_op(self.data @ other.data, (a, b), bw, "matmul")

    def __add__(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.shape == b.shape:
            def bw(g):
                _accum(a, g)
                _accum(b, g)
        elif b.rows == 1 and a.cols == b.cols:
            # row-vector bias broadcast over the rows of a
            def bw(g):
                _accum(a, g)
                _accum(b, g.sum(axis=0, keepdims=True))
        else:
            raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
        return Tensor._from_op(a.data + b.data, (a, b), bw, "add")

    def __sub__(self, other: "Tensor") -> "Tensor":
        if self.shape != other.shape:
            raise ShapeError(f"sub shapes incompatible: {self.shape} - {other.shape}")
        a, b = self, other

        def bw(g):
            _accum(a, g)
            _accum(b, -g)

        return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        if self.shape != other.shape:
            raise ShapeError(f"mul shapes incompatible: {self.shape} * {other.shape}")
        a, b = self, other

        def bw(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c: float) -> "Tensor":
        a, c = self, float(c)

        def bw(g):
            _accum(a, c * g)

        return Tensor._from_op(c * a.data, (a,), bw, "scale")

    def exp(self) -> "Tensor":
        a = self
        y = np.exp(a.data)

        def bw(g):
            _accum(a, g * y)

        return Tensor._from_op(y, (a,), bw, "exp")

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log requires strictly positive inputs")
        a = self

        def bw(g):
            _accum(a, g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), bw, "log")

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0.0

        def bw(g):
            _accum(a, g * mask)

        return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), bw, "relu")

    def clip(self, lo: float, hi: float) -> "Tensor":
        if not lo < hi:
            raise DomainError(f"clip needs lo < hi, got [{lo}, {hi}]")
        a = self
        inside = (a.data > lo) & (a.data < hi)

        def bw(g):
            _accum(a, g * inside)

        return Tensor._from_op(np.clip(a.data, lo, hi), (a,), bw, "clip")

    def transpose(self) -> "Tensor":
        a = self

        def bw(g):
            _accum(a, g.T)

        return Tensor._from_op(a.data.T.copy(), (a,), bw, "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def sum(self) -> "Tensor":
        a = self

        def bw(g):
            _accum(a, np.full(a.data.shape, g[0, 0]))

        return Tensor._from_op(np.array([[a.data.sum()]]), (a,), bw, "sum")

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size

        def bw(g):
            _accum(a, np.full(a.data.shape, g[0, 0] / n))

        return Tensor._from_op(np.array([[a.data.mean()]]), (a,), bw, "mean")


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.data.shape)
    t.grad += g


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two row-aligned tensors."""
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols row counts disagree: {a.shape} vs {b.shape}")
    split = a.cols

    def bw(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return Tensor._from_op(np.hstack([a.data, b.data]), (a, b), bw, "concat_cols")


def gather_rows(t: Tensor, indices) -> Tensor:
    """Row permutation/selection: output row i is `t` row indices[i]."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows needs a 1-D index list")
    if idx.size and (idx.min() < 0 or idx.max() >= t.rows):
        raise ShapeError(f"gather_rows index out of range for {t.rows} rows")
    a = t

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape)
        np.add.at(a.grad, idx, g)

    return Tensor._from_op(t.data[idx], (a,), bw, "gather_rows")


def take_diag(s: Tensor) -> Tensor:
    """Main diagonal of a square tensor as an n x 1 column."""
    if s.rows != s.cols:
        raise ShapeError(f"take_diag needs a square tensor, got {s.shape}")
    a = s
    n = s.rows

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape)
        a.grad[np.arange(n), np.arange(n)] += g[:, 0]

    return Tensor._from_op(np.diag(s.data).reshape(n, 1), (a,), bw, "take_diag")


def row_l2_normalize(m: Tensor) -> Tensor:
    """Scale every row to unit Euclidean norm.

    Raises DegenerateEmbeddingError when any row norm falls below 1e-12,
    since the direction of a null row is undefined.
    """
    norms = np.linalg.norm(m.data, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise DegenerateEmbeddingError(f"row {bad} has norm {norms[bad, 0]:.3e} < 1e-12")
    a = m
    y = m.data / norms

    def bw(g):
        # d/dx (x/|x|) applied row-wise: remove the radial component, then rescale
        inner = np.sum(g * y, axis=1, keepdims=True)
        _accum(a, (g - inner * y) / norms)

    return Tensor._from_op(y, (a,), bw, "row_l2_normalize")


def row_logsumexp(s: Tensor) -> Tensor:
    """Row-wise log-sum-exp with max-subtraction, n x m -> n x 1."""
    if s.cols < 1:
        raise ShapeError("row_logsumexp needs at least one column")
    a = s
    m = s.data.max(axis=1, keepdims=True)
    shifted = np.exp(s.data - m)
    z = shifted.sum(axis=1, keepdims=True)
    soft = shifted / z

    def bw(g):
        _accum(a, g * soft)

    return Tensor._from_op(m + np.log(z), (a,), bw, "row_logsumexp")


def log_mean_exp(v: Tensor) -> Tensor:
    """log((1/n) sum_i exp(v_i)) over an n x 1 column, overflow-safe."""
    if v.cols != 1:
        raise ShapeError(f"log_mean_exp needs an n x 1 column, got {v.shape}")
    if v.rows < 1:
        raise ShapeError("log_mean_exp of an empty column")
    a = v
    m = v.data.max()
    shifted = np.exp(v.data - m)
    z = shifted.sum()
    soft = shifted / z

    def bw(g):
        _accum(a, g[0, 0] * soft)

    out = np.array([[m + np.log(z / v.rows)]])
    return Tensor._from_op(out, (a,), bw, "log_mean_exp")


def backward(loss: Tensor) -> None:
    """Populate grad slots for everything the scalar `loss` depends on."""
    if loss.data.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def grad_check(f, x: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor. Error per entry is
    |analytic - numeric| / max(1, |analytic|); the max over entries is
    returned. Callers are responsible for keeping x away from kinks.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if not np.isfinite(out.item()):
        raise DivergenceError(f"f(x) is non-finite: {out.item()}")
    backward(out)
    analytic = probe.grad_or_zeros()

    numeric = np.zeros(x.data.shape)
    base = x.data.copy()
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            plus = base.copy()
            plus[i, j] += eps
            minus = base.copy()
            minus[i, j] -= eps
            hi = f(Tensor(plus)).item()
            lo = f(Tensor(minus)).item()
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise DivergenceError(f"f non-finite near entry ({i}, {j})")
            numeric[i, j] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
