"""Dense float64 primitives with reverse-mode gradients.

Values are plain numpy float64 arrays.  Gradients come from a
define-by-run graph of Var nodes; each operation records its parents, a
closed-form vector-Jacobian rule, and a forward closure so the recorded
graph can be replayed.  The graph doubles as the gradient tape: walking
it in reverse topological order accumulates gradients into every leaf.

GELU is fixed build-wide to the exact error-function form
``x * Phi(x)`` with ``Phi(x) = 0.5 * (1 + erf(x / sqrt(2)))``; the tanh
approximation is not used anywhere.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .errors import NumericError

# Norm guard shared by every cosine-style operation in the package.
EPS_NORM = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _std_normal_cdf(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu(x):
    """Exact GELU: x * Phi(x). Accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = x * _std_normal_cdf(x)
    return float(out) if out.ndim == 0 else out


def gelu_grad(x):
    """d/dx of exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    out = _std_normal_cdf(x) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def softmax(v, tau):
    """Temperature softmax over the unmasked entries of a vector.

    Entries equal to -inf are mask sentinels: they are excluded from the
    normalization and come out exactly 0.  Stabilized by subtracting the
    max of the unmasked entries.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    v = np.asarray(v, dtype=np.float64)
    masked = np.isneginf(v)
    if masked.all():
        raise ValueError("empty softmax support")
    out = np.zeros_like(v)
    live = v[~masked]
    e = np.exp((live - live.max()) / tau)
    out[~masked] = e / e.sum()
    return out


def cosine_sim(a, b):
    """Guarded cosine: a.b / (max(|a|, eps) * max(|b|, eps)).

    The eps guard makes the operation total; a zero vector scores 0
    against anything.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("vectors must have the same dimension")
    ga = max(float(np.linalg.norm(a)), EPS_NORM)
    gb = max(float(np.linalg.norm(b)), EPS_NORM)
    return float(np.dot(a, b) / (ga * gb))


def guarded_unit_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalize with the eps guard.

    Returns (unit rows, guarded norms, small-norm mask).  Rows whose true
    norm is <= eps are divided by eps instead, matching cosine_sim.
    """
    norms = np.linalg.norm(x, axis=1)
    small = norms <= EPS_NORM
    g = np.maximum(norms, EPS_NORM)
    return x / g[:, None], g, small


def as_matrix(x, name="matrix") -> np.ndarray:
    """Validate a 2-D finite float64 array (the storage contract)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite entries")
    return x


class Var:
    """One node of the gradient tape.

    ``parents`` and ``vjp`` are empty for leaves.  ``fwd`` recomputes the
    value from the parents' values; replay() uses it to re-evaluate the
    recorded graph.
    """

    __slots__ = ("value", "grad", "parents", "vjp", "fwd")

    def __init__(self, value, parents=(), vjp=None, fwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents: Tuple[Var, ...] = tuple(parents)
        self.vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None = vjp
        self.fwd = fwd

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def _topo(root: Var):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(root: Var):
    """Accumulate d(root)/d(leaf) into .grad across the whole graph."""
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")
    order = _topo(root)
    root.accumulate(np.ones_like(root.value))
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is not None:
                parent.accumulate(g)


def replay(root: Var) -> np.ndarray:
    """Re-evaluate the recorded graph from its leaves; returns the root value."""
    memo: Dict[int, np.ndarray] = {}
    for node in _topo(root):
        if node.fwd is None:
            memo[id(node)] = node.value
        else:
            memo[id(node)] = node.fwd(*[memo[id(p)] for p in node.parents])
    return memo[id(root)]


# ---------------------------------------------------------------------------
# Primitive operations.  Each returns a new Var wired into the graph.


def matmul(a: Var, b: Var) -> Var:
    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Var(a.value @ b.value, (a, b), vjp, fwd=lambda av, bv: av @ bv)


def transpose(a: Var) -> Var:
    return Var(a.value.T, (a,), lambda g: (g.T,), fwd=lambda av: av.T)


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError("add requires matching shapes")
    return Var(a.value + b.value, (a, b), lambda g: (g, g), fwd=lambda av, bv: av + bv)


def scale(a: Var, c: float) -> Var:
    return Var(a.value * c, (a,), lambda g: (g * c,), fwd=lambda av: av * c)


def mul_scalar(a: Var, s: Var) -> Var:
    """Elementwise product with a 0-d Var."""

    def vjp(g):
        return g * s.value, np.asarray((g * a.value).sum())

    return Var(a.value * s.value, (a, s), vjp, fwd=lambda av, sv: av * sv)


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,), fwd=np.exp)


def neg(a: Var) -> Var:
    return Var(-a.value, (a,), lambda g: (-g,), fwd=lambda av: -av)


def gelu_op(a: Var) -> Var:
    def vjp(g):
        return (g * gelu_grad(a.value),)

    return Var(gelu(a.value), (a,), vjp, fwd=gelu)


def rows(a: Var, start: int, stop: int) -> Var:
    def vjp(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)

    return Var(a.value[start:stop], (a,), vjp, fwd=lambda av: av[start:stop])


def mean_rows(a: Var) -> Var:
    n = a.value.shape[0]

    def vjp(g):
        return (np.repeat(g / n, n, axis=0),)

    return Var(a.value.mean(axis=0, keepdims=True), (a,), vjp,
               fwd=lambda av: av.mean(axis=0, keepdims=True))


def concat_rows(parts: Sequence[Var]) -> Var:
    parts = tuple(parts)
    counts = [p.value.shape[0] for p in parts]

    def vjp(g):
        out, at = [], 0
        for c in counts:
            out.append(g[at:at + c])
            at += c
        return out

    return Var(np.concatenate([p.value for p in parts], axis=0), parts, vjp,
               fwd=lambda *vals: np.concatenate(vals, axis=0))


def masked_colsoftmax(a: Var, col_mask: np.ndarray) -> Var:
    """Per-column softmax over axis 0; columns with mask False are zero."""
    col_mask = np.asarray(col_mask, dtype=bool)

    def forward(av):
        out = np.zeros_like(av)
        if col_mask.any():
            live = av[:, col_mask]
            e = np.exp(live - live.max(axis=0, keepdims=True))
            out[:, col_mask] = e / e.sum(axis=0, keepdims=True)
        return out

    value = forward(a.value)

    def vjp(g):
        s = value
        da = s * (g - (g * s).sum(axis=0, keepdims=True))
        da[:, ~col_mask] = 0.0
        return (da,)

    return Var(value, (a,), vjp, fwd=forward)


# ---------------------------------------------------------------------------


def grad_check(f, params: Dict[str, np.ndarray], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> (value, grads)`` where grads maps the same keys to
    arrays of matching shape.  Entries are perturbed in place, so f must
    read the current contents of ``params`` on every call.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    value, grads = f(params)
    if not math.isfinite(value):
        raise NumericError("non-finite objective")
    worst = 0.0
    for name, p in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp, _ = f(params)
            flat[i] = orig - epsilon
            fm, _ = f(params)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("non-finite objective")
            numeric = (fp - fm) / (2.0 * epsilon)
            ana = float(analytic.reshape(-1)[i])
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
