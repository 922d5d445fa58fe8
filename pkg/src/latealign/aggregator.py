"""Learnable aggregation of N local tokens into a smaller refined set.

A mixing matrix is produced per input: softmax over the output axis of
``w_q @ gelu(x @ w_k)^T / tau``, computed per input token (column), so
every valid column sums to 1 and the total token mass is conserved.
Padded inputs are dropped by zeroing their columns.  The temperature is
stored in log-space to stay positive under unconstrained updates, and
each branch (image, text) carries its own parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_matrix


@dataclass
class AggregatorParams:
    w_k: np.ndarray       # (d, d_k)
    w_q: np.ndarray       # (n_out, d_k)
    log_tau: np.ndarray   # 0-d

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @property
    def n_out(self) -> int:
        return self.w_q.shape[0]


@dataclass
class RefinedTokens:
    tokens: np.ndarray  # (n_out, d)
    mixing: np.ndarray  # (n_out, N); valid columns sum to 1, padded are 0


def output_count(n_in: int, ratio: float) -> int:
    """Refined token count: max(1, round(ratio * n_in)), half away from zero."""
    if n_in < 1:
        raise ValueError("n_in must be at least 1")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    return max(1, int(math.floor(ratio * n_in + 0.5)))


def init_aggregator(seed: int, d: int, d_k: int, n_out: int) -> AggregatorParams:
    """Seeded Gaussian init, std 1/sqrt(d_k); temperature starts at 1."""
    if d_k >= d:
        raise ValueError("d_k must be strictly smaller than d")
    if n_out < 1:
        raise ValueError("n_out must be at least 1")
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(d_k)
    return AggregatorParams(
        w_k=rng.normal(0.0, std, size=(d, d_k)),
        w_q=rng.normal(0.0, std, size=(n_out, d_k)),
        log_tau=np.zeros(()),
    )


def aggregate_graph(x: Var, valid: np.ndarray, pv: Dict[str, Var]) -> Tuple[Var, Var]:
    """Graph form of aggregate(); returns (tokens, mixing) Vars.

    pv holds the parameter Vars under keys w_k, w_q, log_tau.
    """
    keys = ad.gelu_op(ad.matmul(x, pv["w_k"]))
    logits = ad.matmul(pv["w_q"], ad.transpose(keys))
    inv_tau = ad.exp(ad.neg(pv["log_tau"]))
    mixing = ad.masked_colsoftmax(ad.mul_scalar(logits, inv_tau), valid)
    tokens = ad.matmul(mixing, x)
    return tokens, mixing


def aggregate(x, valid, params: AggregatorParams) -> RefinedTokens:
    """Mix N tokens (rows of x) into params.n_out refined tokens.

    valid marks real rows; padded rows contribute nothing and their
    mixing columns come out exactly zero.
    """
    x = as_matrix(x, "token matrix")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (x.shape[0],):
        raise ValueError("valid mask must have one entry per token row")
    if not valid.any():
        raise ValueError("empty token sequence")
    if params.w_k.shape[0] != x.shape[1]:
        raise ValueError("w_k rows must match the token dimension")
    pv = {
        "w_k": Var(params.w_k),
        "w_q": Var(params.w_q),
        "log_tau": Var(params.log_tau),
    }
    tokens, mixing = aggregate_graph(Var(x), valid, pv)
    return RefinedTokens(tokens=tokens.value, mixing=mixing.value)
