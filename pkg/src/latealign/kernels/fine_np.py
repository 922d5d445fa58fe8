"""Pure-numpy reference implementation of the pairwise scoring kernels.

Semantics match the compiled extension.  The outer (i, j) loop stays in
Python so a batched call runs the exact same per-pair arithmetic as a
single-pair call, which keeps batch output bit-identical to the per-pair
loop within this backend.
"""

from __future__ import annotations

import numpy as np


def fine_forward(vu, nv, tu, nt):
    """Bidirectional max-then-mean pooled dot products over unit rows.

    vu: (B, Nv, d) row-normalized token stacks, zero-padded; nv: valid counts.
    Returns (scores (B, B), av (B, B, Nv) int32, at (B, B, Nt) int32) where
    av[i, j, p] is the argmax text row for image row p (ties to the lowest
    index) and at is the transpose-direction argmax table.
    """
    b = vu.shape[0]
    scores = np.zeros((b, b), dtype=np.float64)
    av = np.zeros((b, b, vu.shape[1]), dtype=np.int32)
    at = np.zeros((b, b, tu.shape[1]), dtype=np.int32)
    for i in range(b):
        vi = vu[i, : nv[i]]
        for j in range(b):
            tj = tu[j, : nt[j]]
            sim = vi @ tj.T
            best_t = sim.argmax(axis=1)
            best_v = sim.argmax(axis=0)
            av[i, j, : nv[i]] = best_t
            at[i, j, : nt[j]] = best_v
            s1 = sim[np.arange(nv[i]), best_t].sum() / nv[i]
            s2 = sim[best_v, np.arange(nt[j])].sum() / nt[j]
            scores[i, j] = s1 + s2
    return scores, av, at


def fine_backward(vu, vg, vsmall, nv, tu, tg, tsmall, nt, av, at, dscores):
    """Gradients of fine_forward w.r.t. the raw (unnormalized) token rows.

    vg/tg are the eps-guarded row norms, vsmall/tsmall flag rows whose
    true norm fell below the guard (their normalization is constant, so
    the projection term drops out of the cosine derivative).
    """
    b = vu.shape[0]
    dv = np.zeros_like(vu)
    dt = np.zeros_like(tu)
    for i in range(b):
        ni = nv[i]
        vi = vu[i, :ni]
        for j in range(b):
            w = dscores[i, j]
            if w == 0.0:
                continue
            nj = nt[j]
            tj = tu[j, :nj]

            q = av[i, j, :ni]
            tq = tj[q]
            c = np.einsum("pd,pd->p", vi, tq)
            cv = np.where(vsmall[i, :ni], 0.0, c)
            ct = np.where(tsmall[j, q], 0.0, c)
            coef = w / ni
            dv[i, :ni] += coef * (tq - cv[:, None] * vi) / vg[i, :ni, None]
            np.add.at(dt[j], q, coef * (vi - ct[:, None] * tq) / tg[j, q, None])

            p = at[i, j, :nj]
            vp = vi[p]
            c2 = np.einsum("qd,qd->q", tj, vp)
            ct2 = np.where(tsmall[j, :nj], 0.0, c2)
            cv2 = np.where(vsmall[i, p], 0.0, c2)
            coef2 = w / nj
            dt[j, :nj] += coef2 * (vp - ct2[:, None] * tj) / tg[j, :nj, None]
            np.add.at(dv[i], p, coef2 * (tj - cv2[:, None] * vp) / vg[i, p, None])
    return dv, dt
