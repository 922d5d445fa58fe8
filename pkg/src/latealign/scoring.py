"""Late-interaction pair scoring.

The fine score of two token sets is the mean over image rows of the max
cosine against text rows, plus the same pooled the other way round; it
lives in [-2, 2] and treats each side as a set.  The coarse score is the
plain cosine of the two global vectors.  The combined score halves the
fine value onto the coarse range before taking a weighted sum.

Batch scoring delegates the hot loop to the kernels backend.  Within a
backend, a matrix entry is bit-identical to scoring that pair alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import kernels
from .autodiff import Var, as_matrix, cosine_sim, guarded_unit_rows

_FINE_BOUND = 2.0 + 1e-9
_COARSE_BOUND = 1.0 + 1e-9


@dataclass
class ScoredPair:
    fine: float
    coarse: float

    def __post_init__(self):
        if abs(self.fine) > _FINE_BOUND:
            raise ValueError("fine score out of range")
        if abs(self.coarse) > _COARSE_BOUND:
            raise ValueError("coarse score out of range")


@dataclass
class ScoringSet:
    """Scoring-ready views of one encoded sample."""

    tokens: np.ndarray      # (n, d) fine-grained token set
    global_vec: np.ndarray  # (d,) global representation


def _pack(sets: Sequence[np.ndarray]):
    """Stack ragged token sets into padded arrays the kernels accept."""
    mats = [as_matrix(s, "token set") for s in sets]
    if any(m.shape[0] == 0 for m in mats):
        raise ValueError("empty token sequence")
    d = mats[0].shape[1]
    if any(m.shape[1] != d for m in mats):
        raise ValueError("token sets must share one dimension")
    n_max = max(m.shape[0] for m in mats)
    b = len(mats)
    xu = np.zeros((b, n_max, d), dtype=np.float64)
    g = np.ones((b, n_max), dtype=np.float64)
    small = np.zeros((b, n_max), dtype=np.uint8)
    counts = np.empty(b, dtype=np.int32)
    for i, m in enumerate(mats):
        unit, norms, sm = guarded_unit_rows(m)
        n = m.shape[0]
        xu[i, :n] = unit
        g[i, :n] = norms
        small[i, :n] = sm
        counts[i] = n
    return xu, g, small, counts


def fine_score(v_tokens, t_tokens) -> float:
    """Bidirectional max-then-mean pooled cosine over two token sets."""
    xu, _, _, nv = _pack([v_tokens])
    tu, _, _, nt = _pack([t_tokens])
    scores, _, _ = kernels.fine_forward(xu, nv, tu, nt)
    return float(scores[0, 0])


def coarse_score(v_global, t_global) -> float:
    """Cosine of the two global vectors."""
    return cosine_sim(v_global, t_global)


def combined_score(fine: float, coarse: float, weight: float) -> float:
    """weight * (fine / 2) + (1 - weight) * coarse."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    return weight * (fine / 2.0) + (1.0 - weight) * coarse


def combine_matrices(fine: np.ndarray, coarse: np.ndarray, weight: float) -> np.ndarray:
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    return weight * (fine / 2.0) + (1.0 - weight) * coarse


def score_matrix(images: Sequence[ScoringSet], texts: Sequence[ScoringSet],
                 mode: str = "fine", weight: float = 0.5) -> np.ndarray:
    """All-pairs score matrix; entry (i, j) scores image i against text j."""
    if len(images) != len(texts):
        raise ValueError("ragged batch")
    if len(images) == 0:
        raise ValueError("empty batch")
    if mode == "fine":
        xu, _, _, nv = _pack([s.tokens for s in images])
        tu, _, _, nt = _pack([s.tokens for s in texts])
        scores, _, _ = kernels.fine_forward(xu, nv, tu, nt)
        return scores
    if mode == "coarse":
        b = len(images)
        out = np.empty((b, b), dtype=np.float64)
        for i in range(b):
            for j in range(b):
                out[i, j] = coarse_score(images[i].global_vec, texts[j].global_vec)
        return out
    if mode == "combined":
        return combine_matrices(
            score_matrix(images, texts, "fine"),
            score_matrix(images, texts, "coarse"),
            weight,
        )
    raise ValueError(f"unknown scoring mode: {mode!r}")


def fine_scores_graph(v_sets: List[Var], t_sets: List[Var]) -> Var:
    """Differentiable B x B fine score matrix over per-sample token Vars."""
    if len(v_sets) != len(t_sets):
        raise ValueError("ragged batch")
    xu, vg, vsmall, nv = _pack([v.value for v in v_sets])
    tu, tg, tsmall, nt = _pack([t.value for t in t_sets])
    scores, av, at = kernels.fine_forward(xu, nv, tu, nt)

    def vjp(g):
        dv, dt = kernels.fine_backward(
            xu, vg, vsmall, nv, tu, tg, tsmall, nt, av, at,
            np.ascontiguousarray(g, dtype=np.float64),
        )
        out = [dv[i, : nv[i]] for i in range(len(v_sets))]
        out += [dt[j, : nt[j]] for j in range(len(t_sets))]
        return out

    def fwd(*values):
        k = len(v_sets)
        pxu, _, _, pnv = _pack(values[:k])
        ptu, _, _, pnt = _pack(values[k:])
        return kernels.fine_forward(pxu, pnv, ptu, pnt)[0]

    return Var(scores, tuple(v_sets) + tuple(t_sets), vjp, fwd=fwd)


def cosine_rows_graph(a: Var, b: Var) -> Var:
    """Differentiable pairwise cosine matrix between rows of two stacks."""
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ValueError("ragged batch")
    n = av.shape[0]

    def forward(x, y):
        out = np.empty((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(n):
                out[i, j] = cosine_sim(x[i], y[j])
        return out

    value = forward(av, bv)
    au, ag, asmall = guarded_unit_rows(av)
    bu, bg, bsmall = guarded_unit_rows(bv)

    def vjp(g):
        a_eff = np.where(asmall[:, None], 0.0, au)
        b_eff = np.where(bsmall[:, None], 0.0, bu)
        da = (g @ bu - (g * value).sum(axis=1, keepdims=True) * a_eff) / ag[:, None]
        db = (g.T @ au - (g * value).sum(axis=0)[:, None] * b_eff) / bg[:, None]
        return da, db

    return Var(value, (a, b), vjp, fwd=forward)
