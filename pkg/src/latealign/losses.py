"""Batch losses over a square score matrix whose diagonal holds positives.

The dual triplet loss mines the hardest in-batch negative per anchor in
both directions and averages hinge terms over anchors, so its magnitude
is batch-size independent.  The contrastive baseline is the symmetric
cross-entropy of the score matrix at a fixed temperature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .autodiff import Var, as_matrix


@dataclass
class LossBreakdown:
    i2t: float
    t2i: float
    total: float


def _check_square(scores) -> np.ndarray:
    s = as_matrix(scores, "score matrix")
    if s.shape[0] != s.shape[1]:
        raise ValueError("score matrix must be square")
    if s.shape[0] < 2:
        raise ValueError("no negatives available")
    return s


def _triplet_parts(s: np.ndarray, alpha: float):
    b = s.shape[0]
    off = s.copy()
    np.fill_diagonal(off, -np.inf)
    diag = np.diag(s)
    row_arg = off.argmax(axis=1)
    row_hinge = np.maximum(0.0, off[np.arange(b), row_arg] - diag + alpha)
    col_arg = off.argmax(axis=0)
    col_hinge = np.maximum(0.0, off[col_arg, np.arange(b)] - diag + alpha)
    return row_arg, row_hinge, col_arg, col_hinge


def triplet_dual(scores, alpha: float) -> LossBreakdown:
    """Hardest-negative triplet hinge, averaged per direction then summed."""
    s = _check_square(scores)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    _, row_hinge, _, col_hinge = _triplet_parts(s, alpha)
    i2t = float(row_hinge.mean())
    t2i = float(col_hinge.mean())
    return LossBreakdown(i2t=i2t, t2i=t2i, total=i2t + t2i)


def triplet_dual_graph(scores: Var, alpha: float) -> Tuple[Var, LossBreakdown]:
    s = _check_square(scores.value)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    b = s.shape[0]
    row_arg, row_hinge, col_arg, col_hinge = _triplet_parts(s, alpha)
    breakdown = LossBreakdown(
        i2t=float(row_hinge.mean()),
        t2i=float(col_hinge.mean()),
        total=float(row_hinge.mean()) + float(col_hinge.mean()),
    )

    def vjp(g):
        w = float(g)
        ds = np.zeros_like(s)
        for i in range(b):
            if row_hinge[i] > 0.0:
                ds[i, row_arg[i]] += w / b
                ds[i, i] -= w / b
            if col_hinge[i] > 0.0:
                ds[col_arg[i], i] += w / b
                ds[i, i] -= w / b
        return (ds,)

    def fwd(sv):
        _, rh, _, ch = _triplet_parts(sv, alpha)
        return np.asarray(rh.mean() + ch.mean())

    return Var(np.asarray(breakdown.total), (scores,), vjp, fwd=fwd), breakdown


def _contrastive_parts(s: np.ndarray, temperature: float):
    z = s / temperature
    zr = z - z.max(axis=1, keepdims=True)
    pr = np.exp(zr)
    pr /= pr.sum(axis=1, keepdims=True)
    zc = z - z.max(axis=0, keepdims=True)
    pc = np.exp(zc)
    pc /= pc.sum(axis=0, keepdims=True)
    b = s.shape[0]
    idx = np.arange(b)
    loss_row = float(np.mean(-np.log(pr[idx, idx])))
    loss_col = float(np.mean(-np.log(pc[idx, idx])))
    return pr, pc, loss_row, loss_col


def contrastive_directions(scores, temperature: float) -> Tuple[float, float]:
    """The row-wise and column-wise cross-entropy terms, before averaging."""
    s = _check_square(scores)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    _, _, loss_row, loss_col = _contrastive_parts(s, temperature)
    return loss_row, loss_col


def global_contrastive(scores, temperature: float) -> float:
    """Symmetric cross-entropy at the diagonal, averaged over directions."""
    loss_row, loss_col = contrastive_directions(scores, temperature)
    return 0.5 * (loss_row + loss_col)


def global_contrastive_graph(scores: Var, temperature: float) -> Var:
    s = _check_square(scores.value)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    pr, pc, loss_row, loss_col = _contrastive_parts(s, temperature)
    b = s.shape[0]
    eye = np.eye(b)

    def vjp(g):
        w = float(g)
        return (w * 0.5 * ((pr - eye) + (pc - eye)) / (b * temperature),)

    def fwd(sv):
        _, _, lr, lc = _contrastive_parts(sv, temperature)
        return np.asarray(0.5 * (lr + lc))

    return Var(np.asarray(0.5 * (loss_row + loss_col)), (scores,), vjp, fwd=fwd)
