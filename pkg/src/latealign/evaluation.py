"""Retrieval evaluation: Recall@K both directions under three score modes.

Ground truth is the diagonal of the square score matrix.  Ties are
broken pessimistically: a competitor with a lower index outranks the
diagonal when their scores are exactly equal.  Reports are plain dicts
that serialize to a single JSON document.
"""

from __future__ import annotations

import json
from typing import Dict

import numpy as np

from .corpus import PairCorpus, fingerprint
from .scoring import combine_matrices, score_matrix
from .trainer import ModelParams, TrainConfig, scoring_sets

RECALL_KS = (1, 5, 10)


def recall_at_k(scores, k: int, direction: str) -> float:
    """Fraction of anchors whose diagonal entry ranks within the top k."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("score matrix must be square")
    n = s.shape[0]
    if not 1 <= k <= n:
        raise ValueError("k out of range")
    if direction == "t2i":
        return recall_at_k(s.T, k, "i2t")
    if direction != "i2t":
        raise ValueError("direction must be 'i2t' or 't2i'")
    hits = 0
    for i in range(n):
        row = s[i]
        d = row[i]
        stronger = int((row > d).sum())
        tied_lower = int((row[:i] == d).sum())
        if 1 + stronger + tied_lower <= k:
            hits += 1
    return hits / n


def _mode_recalls(scores: np.ndarray) -> Dict[str, Dict[str, float]]:
    n = scores.shape[0]
    out = {"i2t": {}, "t2i": {}}
    for k in RECALL_KS:
        k_eff = min(k, n)
        out["i2t"][f"r{k}"] = recall_at_k(scores, k_eff, "i2t")
        out["t2i"][f"r{k}"] = recall_at_k(scores, k_eff, "t2i")
    return out


def evaluate(model: ModelParams, corpus: PairCorpus, config: TrainConfig) -> dict:
    """Score every pair against every other and report all three modes."""
    if corpus.n_pairs < 1:
        raise ValueError("empty corpus")
    sets_v, sets_t = scoring_sets(model, corpus.image_tokens, corpus.text_tokens, config)
    fine = score_matrix(sets_v, sets_t, "fine")
    coarse = score_matrix(sets_v, sets_t, "coarse")
    combined = combine_matrices(fine, coarse, config.combine_weight)
    return {
        "config": {
            "aggregate_image": config.aggregate_image,
            "aggregate_text": config.aggregate_text,
            "include_global": config.include_global,
            "combine_weight": config.combine_weight,
            "ratio": config.ratio,
            "d": config.d,
            "d_k": config.d_k,
        },
        "corpus_fingerprint": fingerprint(corpus),
        "n_pairs": corpus.n_pairs,
        "modes": {
            "fine": _mode_recalls(fine),
            "coarse": _mode_recalls(coarse),
            "combined": _mode_recalls(combined),
        },
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
