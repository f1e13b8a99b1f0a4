"""Reverse-mode differentiation over dense float64 arrays.

Each operation returns a node carrying its forward value and a closure that
maps the incoming gradient to per-parent gradients. ``Tensor.backward`` walks
the graph once in reverse topological order and accumulates into ``.grad``.
Everything is float64; no op introduces randomness, so a graph built from the
same inputs always produces bit-identical values and gradients.

Reductions that run across the label axis elsewhere in the package
(``softmax``, ``sum_exact``, ``matmul_exact``, ``l1_normalize_rows``) use
exactly rounded summation so their forward values do not depend on operand
order. That property is what makes label-permutation equivariance hold
bit-exactly downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

NORM_EPS = 1e-12  # guards cosine denominators and log arguments
DEFAULT_LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class Tensor:
    """Dense float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward_rule")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_rule: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )
        self._backward_rule = backward_rule

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Seed d(self)/d(self) = 1 and propagate to every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_rule is None or node.grad is None:
                continue
            parent_grads = node._backward_rule(node.grad)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += grad

    # Operator sugar. Python scalars become constant leaves.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division is only supported by a python scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: training graphs run past Python's recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor(data, parents=parents, backward_rule=rule)
    if not out.requires_grad:
        out._backward_rule = None  # dead subtree, skip bookkeeping
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _fsum(values: list[float]) -> float:
    try:
        return math.fsum(values)
    except OverflowError:  # true sum leaves the double range: round to +/-inf
        with np.errstate(over="ignore"):
            return float(np.sum(values))
    except ValueError:  # opposite infinities among the addends
        return math.nan


def _fsum_axis(data: np.ndarray, axis: int) -> np.ndarray:
    """Exactly rounded sum along one axis; result is order-independent."""
    moved = np.moveaxis(data, axis, -1)
    lead = moved.shape[:-1]
    rows = moved.reshape(-1, moved.shape[-1]).tolist()
    out = np.fromiter((_fsum(row) for row in rows), dtype=np.float64, count=len(rows))
    return out.reshape(lead)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _node(a.data + b.data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    def rule(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return _node(a.data - b.data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; broadcasting follows numpy rules."""
    _check_broadcast(a, b, "mul")
    def rule(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )
    return _node(a.data * b.data, (a, b), rule)


hadamard = mul


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    def rule(g):
        return (g * factor,)
    return _node(a.data * factor, (a,), rule)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    def rule(g):
        return g @ b.data.T, a.data.T @ g
    return _node(a.data @ b.data, (a, b), rule)


def matmul_exact(a: Tensor, b: Tensor) -> Tensor:
    """matmul whose inner sums are exactly rounded (order-independent)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul_exact: incompatible shapes {a.shape} and {b.shape}")
    m, n = a.shape[0], b.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    bt = b.data.T
    for i in range(m):
        row = a.data[i]
        for j in range(n):
            out[i, j] = _fsum((row * bt[j]).tolist())
    def rule(g):
        return g @ b.data.T, a.data.T @ g
    return _node(out, (a, b), rule)


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {a.shape} and {x.shape}")
    def rule(g):
        return np.outer(g, x.data), a.data.T @ g
    return _node(a.data @ x.data, (a, x), rule)


def vecmat(x: Tensor, a: Tensor) -> Tensor:
    if x.ndim != 1 or a.ndim != 2 or x.shape[0] != a.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {x.shape} and {a.shape}")
    def rule(g):
        return a.data @ g, np.outer(x.data, g)
    return _node(x.data @ a.data, (x, a), rule)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    def rule(g):
        return g * b.data, g * a.data
    return _node(np.dot(a.data, b.data), (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: needs a matrix, got shape {a.shape}")
    def rule(g):
        return (g.T,)
    return _node(a.data.T.copy(), (a,), rule)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    def rule(g):
        return (g.reshape(a.shape),)
    return _node(a.data.reshape(shape).copy(), (a,), rule)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    for i, (sa, sb) in enumerate(zip(a.shape, b.shape)):
        if i != (axis % a.ndim) and sa != sb:
            raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    ax = axis % a.ndim
    split = a.shape[ax]
    def rule(g):
        ga, gb = np.split(g, [split], axis=ax)
        return ga, gb
    return _node(np.concatenate([a.data, b.data], axis=ax), (a, b), rule)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("stack: needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"stack: mixed shapes {shape} and {t.shape}")
    def rule(g):
        return tuple(g[i] for i in range(len(tensors)))
    return _node(np.stack([t.data for t in tensors]), tensors, rule)


def take_row(m: Tensor, index: int) -> Tensor:
    """Extract row `index` of a matrix as a vector."""
    if m.ndim != 2:
        raise ShapeError(f"take_row: needs a matrix, got shape {m.shape}")
    if not 0 <= index < m.shape[0]:
        raise ShapeError(f"take_row: row {index} out of range for {m.shape[0]} rows")
    def rule(g):
        out = np.zeros_like(m.data)
        out[index] = g
        return (out,)
    return _node(m.data[index].copy(), (m,), rule)


def gather(v: Tensor, indices) -> Tensor:
    if v.ndim != 1:
        raise ShapeError(f"gather: needs a vector, got shape {v.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= v.shape[0]):
        raise ShapeError(f"gather: index out of range for length {v.shape[0]}")
    def rule(g):
        out = np.zeros_like(v.data)
        np.add.at(out, idx, g)
        return (out,)
    return _node(v.data[idx], (v,), rule)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        def rule(g):
            return (np.broadcast_to(g, a.shape).copy(),)
        return _node(np.sum(a.data), (a,), rule)
    ax = axis % max(a.ndim, 1)
    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)
    return _node(np.sum(a.data, axis=ax), (a,), rule)


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis % a.ndim]
    return scale(reduce_sum(a, axis), 1.0 / n)


def sum_exact(a: Tensor, axis: int) -> Tensor:
    """Sum along `axis` with exact rounding; see module docstring."""
    if a.ndim == 0:
        raise ShapeError("sum_exact: needs at least one axis")
    ax = axis % a.ndim
    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)
    return _node(_fsum_axis(a.data, ax), (a,), rule)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    def rule(g):
        return (g * (1.0 - out * out),)
    return _node(out, (a,), rule)


def relu(a: Tensor) -> Tensor:
    # Subgradient at 0 takes the inactive branch (0).
    mask = a.data > 0.0
    def rule(g):
        return (g * mask,)
    return _node(np.where(mask, a.data, 0.0), (a,), rule)


def leaky_relu(a: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    slope = float(slope)
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must lie in (0, 1), got {slope}")
    mask = a.data > 0.0
    def rule(g):
        return (g * np.where(mask, 1.0, slope),)
    return _node(np.where(mask, a.data, slope * a.data), (a,), rule)


def elu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    expm = np.expm1(a.data)
    def rule(g):
        return (g * np.where(mask, 1.0, expm + 1.0),)
    return _node(np.where(mask, a.data, expm), (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay overflow-free for large |x|.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    def rule(g):
        return (g * out * (1.0 - out),)
    return _node(out, (a,), rule)


def log(a: Tensor) -> Tensor:
    """Natural log of a nonnegative input, guarded as log(x + 1e-12)."""
    shifted = a.data + NORM_EPS
    def rule(g):
        return (g / shifted,)
    return _node(np.log(shifted), (a,), rule)


def absolute(a: Tensor) -> Tensor:
    # Subgradient at 0 is 0 (numpy sign convention).
    sign = np.sign(a.data)
    def rule(g):
        return (g * sign,)
    return _node(np.abs(a.data), (a,), rule)


def neg_binary_entropy(p: Tensor) -> Tensor:
    """Elementwise p·log(p) + (1-p)·log(1-p) with the 0·log0 = 0 convention.

    Bounded in [-ln 2, 0] exactly, including at saturated p in {0, 1}; the
    gradient there takes the flat branch.
    """
    x = p.data
    inner = (x > 0.0) & (x < 1.0)
    safe = np.where(inner, x, 0.5)
    value = np.where(inner, safe * np.log(safe) + (1.0 - safe) * np.log1p(-safe), 0.0)
    def rule(g):
        return (g * np.where(inner, np.log(safe) - np.log1p(-safe), 0.0),)
    return _node(value, (p,), rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; the normalizing sum is exactly rounded."""
    ax = axis % a.ndim if a.ndim else 0
    shifted = a.data - np.max(a.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(_fsum_axis(e, ax), ax)
    out = e / denom
    def rule(g):
        inner = np.sum(g * out, axis=ax, keepdims=True)
        return (out * (g - inner),)
    return _node(out, (a,), rule)


# ---------------------------------------------------------------------------
# similarity and pooling


def l1_normalize_rows(q: Tensor) -> Tensor:
    """Divide each nonnegative row by its exact sum; all-zero rows go uniform.

    The uniform fallback is a constant region: its gradient is zero.
    """
    if q.ndim != 2:
        raise ShapeError(f"l1_normalize_rows: needs a matrix, got shape {q.shape}")
    if np.any(q.data < 0.0):
        raise ValueError("l1_normalize_rows: rows must be nonnegative")
    n_cols = q.shape[1]
    sums = _fsum_axis(q.data, 1)
    live = sums > 0.0
    safe = np.where(live, sums, 1.0)
    out = np.where(live[:, None], q.data / safe[:, None], 1.0 / n_cols)
    def rule(g):
        weighted = np.sum(g * q.data, axis=1)
        grad = g / safe[:, None] - (weighted / (safe * safe))[:, None]
        return (np.where(live[:, None], grad, 0.0),)
    return _node(out, (q,), rule)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors, clipped to [-1, 1].

    The denominator is max(|a|·|b|, 1e-12); a zero vector therefore maps to 0.
    Clipped or guard-active points take the flat branch in backward.
    """
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: incompatible shapes {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    raw_den = na * nb
    den = max(raw_den, NORM_EPS)
    num = float(np.dot(a.data, b.data))
    c_raw = num / den
    c = min(1.0, max(-1.0, c_raw))
    active = (abs(c_raw) < 1.0) and (raw_den >= NORM_EPS)
    def rule(g):
        if not active:
            z = np.zeros_like(a.data)
            return z, z.copy()
        gs = float(g)
        ga = gs * (b.data / den - c_raw * a.data / (na * na))
        gb = gs * (a.data / den - c_raw * b.data / (nb * nb))
        return ga, gb
    return _node(np.float64(c), (a, b), rule)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity of the rows of two matrices, clipped to [-1, 1]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_rows: incompatible shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    raw_den = np.outer(na, nb)
    den = np.maximum(raw_den, NORM_EPS)
    c_raw = (a.data @ b.data.T) / den
    c = np.clip(c_raw, -1.0, 1.0)
    active = (np.abs(c_raw) < 1.0) & (raw_den >= NORM_EPS)
    def rule(g):
        gm = np.where(active, g, 0.0)
        gd = gm / den
        na2 = np.maximum(na * na, NORM_EPS)
        nb2 = np.maximum(nb * nb, NORM_EPS)
        ga = gd @ b.data - (np.sum(gm * c_raw, axis=1) / na2)[:, None] * a.data
        gb = gd.T @ a.data - (np.sum(gm * c_raw, axis=0) / nb2)[:, None] * b.data
        return ga, gb
    return _node(c, (a, b), rule)


def _topk_indices(row: np.ndarray, k: int) -> np.ndarray:
    # Descending by value; ties resolved toward the lowest index.
    order = np.argsort(-row, kind="stable")
    return order[:k]


def topk_mean(v: Tensor, k: int) -> Tensor:
    """Mean of the k largest entries; ties pick the lowest index first."""
    if v.ndim != 1:
        raise ShapeError(f"topk_mean: needs a vector, got shape {v.shape}")
    if not 1 <= k <= v.shape[0]:
        raise ValueError(f"topk_mean: k={k} invalid for length {v.shape[0]}")
    idx = _topk_indices(v.data, k)
    def rule(g):
        out = np.zeros_like(v.data)
        out[idx] = float(g) / k
        return (out,)
    return _node(np.float64(np.sum(v.data[idx]) / k), (v,), rule)


def topk_mean_rows(m: Tensor, k: int) -> Tensor:
    """Per-row top-k mean of a matrix; same tie rule as topk_mean."""
    if m.ndim != 2:
        raise ShapeError(f"topk_mean_rows: needs a matrix, got shape {m.shape}")
    rows, cols = m.shape
    if not 1 <= k <= cols:
        raise ValueError(f"topk_mean_rows: k={k} invalid for width {cols}")
    idx = np.stack([_topk_indices(m.data[i], k) for i in range(rows)])
    out = np.array([np.sum(m.data[i, idx[i]]) / k for i in range(rows)])
    def rule(g):
        gm = np.zeros_like(m.data)
        gm[np.arange(rows)[:, None], idx] = (g / k)[:, None]
        return (gm,)
    return _node(out, (m,), rule)


def add_outer(u: Tensor, v: Tensor) -> Tensor:
    """out[i, j] = u[i] + v[j]."""
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"add_outer: needs two vectors, got {u.shape} and {v.shape}")
    def rule(g):
        return g.sum(axis=1), g.sum(axis=0)
    return _node(u.data[:, None] + v.data[None, :], (u, v), rule)


def sub_outer(u: Tensor, v: Tensor) -> Tensor:
    """out[i, j] = u[i] - v[j]."""
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"sub_outer: needs two vectors, got {u.shape} and {v.shape}")
    def rule(g):
        return g.sum(axis=1), -g.sum(axis=0)
    return _node(u.data[:, None] - v.data[None, :], (u, v), rule)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: incompatible shapes {a.shape} and {b.shape}")
    return reduce_sum(absolute(sub(a, b)))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias for a vector or a batch of row vectors."""
    if weight.ndim != 2:
        raise ShapeError(f"linear: weight must be a matrix, got shape {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        return add(vecmat(x, weight), bias)
    if x.ndim == 2:
        return add(matmul(x, weight), bias)
    raise ShapeError(f"linear: input must be rank 1 or 2, got shape {x.shape}")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass(frozen=True)
class GradCheckReport:
    """Per-input max relative errors from one finite-difference comparison.

    The error for an input is max|analytic - numeric| normalized by
    max(1, the largest gradient magnitude seen for that input), so inputs
    whose true gradient is zero are judged on an absolute scale.
    """

    errors: dict[str, float]
    step: float
    tol: float
    note: str = ""

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        if self.note:
            return False
        return all(math.isfinite(e) and e <= self.tol for e in self.errors.values())

    def failures(self) -> list[str]:
        bad = [k for k, e in self.errors.items() if not (math.isfinite(e) and e <= self.tol)]
        if self.note and not bad:
            bad = ["<forward>"]
        return bad


def gradcheck(
    f: Callable[[dict[str, Tensor]], Tensor],
    inputs: dict[str, np.ndarray],
    step: float = 1e-6,
    tol: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must be a pure function from named leaves to a scalar Tensor; it is
    re-evaluated 2·(total input size) times for the numeric side. Non-finite
    forward values or gradients are reported as failures, not raised.
    """
    base = {k: np.asarray(v, dtype=np.float64).copy() for k, v in inputs.items()}

    def run(values: dict[str, np.ndarray]) -> Tensor:
        leaves = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
        out = f(leaves)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ShapeError("gradcheck: f must return a scalar Tensor")
        return out

    probe = run(base)
    if not np.isfinite(probe.data).all():
        return GradCheckReport(
            errors={k: math.inf for k in base}, step=step, tol=tol,
            note="forward value is not finite",
        )

    leaves = {k: Tensor(v, requires_grad=True) for k, v in base.items()}
    out = f(leaves)
    out.backward()
    analytic = {
        k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(base[k]))
        for k in base
    }

    errors: dict[str, float] = {}
    note = ""
    for k, arr in base.items():
        numeric = np.zeros_like(arr)
        work = {n: v.copy() for n, v in base.items()}
        flat = work[k].reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = run(work).item()
            flat[i] = keep - step
            lo = run(work).item()
            flat[i] = keep
            num_flat[i] = (hi - lo) / (2.0 * step)
        if not (np.isfinite(numeric).all() and np.isfinite(analytic[k]).all()):
            errors[k] = math.inf
            note = "non-finite gradient encountered"
            continue
        span = max(
            1.0,
            float(np.max(np.abs(analytic[k]))) if arr.size else 0.0,
            float(np.max(np.abs(numeric))) if arr.size else 0.0,
        )
        diff = float(np.max(np.abs(analytic[k] - numeric))) if arr.size else 0.0
        errors[k] = diff / span
    return GradCheckReport(errors=errors, step=step, tol=tol, note=note)
