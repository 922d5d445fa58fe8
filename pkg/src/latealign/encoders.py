"""Desk-scale dual encoders producing token sequences with a global row.

Each branch is a linear token projection plus positional rows, with a
mean-pool head that emits the global row (index 0 for images, the last
valid position for texts).  The text branch consumes continuous token
features, prepends a learned begin-of-sequence row, and pads to a fixed
context length; its positional table is produced by posembed.stretch, so
the long-context path runs inside every training step.  The mechanisms
under test downstream (aggregation, late-interaction scoring, losses)
do not care that the encoders are shallow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_matrix
from .posembed import PositionalTable, stretch


@dataclass
class EncoderParams:
    proj: np.ndarray       # (d_in, d)
    cls_head: np.ndarray   # (d, d)
    pos: PositionalTable   # length >= context rows it serves
    bos: Optional[np.ndarray] = None  # (d,), text branch only


@dataclass
class TokenSequence:
    tokens: np.ndarray      # (N, d)
    valid: np.ndarray       # (N,) bool
    global_index: int

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if not self.valid[self.global_index]:
            raise ValueError("global row must be valid")

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


def init_image_encoder(seed: int, d_in: int, d: int, n_patches: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    return EncoderParams(
        proj=rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d)),
        cls_head=rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)),
        pos=PositionalTable(rng.normal(0.0, 0.02, size=(n_patches, d))),
    )


def init_text_encoder(seed: int, d_in: int, d: int, base_len: int,
                      keep: int, factor: int) -> EncoderParams:
    """Text branch; the positional table is a stretched short base table."""
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d))
    cls_head = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
    base = PositionalTable(rng.normal(0.0, 0.02, size=(base_len, d)))
    bos = rng.normal(0.0, 0.02, size=d)
    return EncoderParams(proj=proj, cls_head=cls_head,
                         pos=stretch(base, keep, factor), bos=bos)


def encode_image_graph(patches: np.ndarray, pv: Dict[str, Var]) -> Tuple[Var, Var]:
    """Returns (local rows (P, d), global row (1, d)) as graph nodes."""
    p = patches.shape[0]
    local = ad.add(ad.matmul(Var(patches), pv["proj"]), ad.rows(pv["pos"], 0, p))
    cls = ad.matmul(ad.mean_rows(local), pv["cls_head"])
    return local, cls


def encode_text_graph(words: np.ndarray, pv: Dict[str, Var]) -> Tuple[Var, Var, Var]:
    """Returns (bos row (1, d), content rows (M, d), eos row (1, d)).

    The eos row pools every row before it, bos included, so the bos
    embedding receives gradient even though it stays out of the
    fine-grained token sets.
    """
    m = words.shape[0]
    content = ad.add(ad.matmul(Var(words), pv["proj"]), ad.rows(pv["pos"], 1, m + 1))
    bos_row = pv["bos"]
    eos = ad.matmul(ad.mean_rows(ad.concat_rows([bos_row, content])), pv["cls_head"])
    return bos_row, content, eos


def _image_param_graph(params: EncoderParams) -> Dict[str, Var]:
    return {"proj": Var(params.proj), "cls_head": Var(params.cls_head),
            "pos": Var(params.pos.entries)}


def _text_param_graph(params: EncoderParams) -> Dict[str, Var]:
    return {"proj": Var(params.proj), "cls_head": Var(params.cls_head),
            "pos": Var(params.pos.entries),
            "bos": Var(params.bos.reshape(1, -1))}


def encode_image(patches, params: EncoderParams) -> TokenSequence:
    """Project P patches and prepend the mean-pooled global row."""
    patches = as_matrix(patches, "patches")
    p = patches.shape[0]
    if p < 1:
        raise ValueError("empty token sequence")
    if patches.shape[1] != params.proj.shape[0]:
        raise ValueError("patch dimension does not match the projection")
    if p > params.pos.length:
        raise ValueError("more patches than positional rows")
    local, cls = encode_image_graph(patches, _image_param_graph(params))
    tokens = np.concatenate([cls.value, local.value], axis=0)
    return TokenSequence(tokens=tokens, valid=np.ones(p + 1, dtype=bool),
                         global_index=0)


def encode_text(words, params: EncoderParams, max_len: int) -> TokenSequence:
    """Encode M word features into a padded context of max_len rows.

    Layout: bos, M content rows, eos, then zero padding.  The global
    index is the eos position M + 1.
    """
    words = as_matrix(words, "words")
    m = words.shape[0]
    if m < 1:
        raise ValueError("empty token sequence")
    if m > max_len - 2:
        raise ValueError("caption exceeds context")
    if max_len > params.pos.length:
        raise ValueError("context longer than the positional table")
    if words.shape[1] != params.proj.shape[0]:
        raise ValueError("word dimension does not match the projection")
    bos_row, content, eos = encode_text_graph(words, _text_param_graph(params))
    d = params.proj.shape[1]
    tokens = np.zeros((max_len, d), dtype=np.float64)
    tokens[0] = bos_row.value[0]
    tokens[1:m + 1] = content.value
    tokens[m + 1] = eos.value[0]
    valid = np.zeros(max_len, dtype=bool)
    valid[: m + 2] = True
    return TokenSequence(tokens=tokens, valid=valid, global_index=m + 1)
