"""Synthetic paired corpora with planted token-level correspondence.

Each pair shares a set of freshly drawn concept vectors: the image holds
noisy copies of them among background tokens, the text holds independent
noisy copies among distractor tokens drawn from one global pool, and
both sequences are shuffled so the correspondence is token-level rather
than positional.  Distractors carry no pair identity, which makes
token matching, not global pooling, the recoverable signal.

On-disk format ("FLCP", little-endian):

    magic "FLCP" | u32 version=1 | u32 n_pairs | u32 P | u32 M_max | u32 d_in
    per pair: P*d_in float32 row-major
              u32 m_i
              m_i*d_in float32 row-major

Values are quantized to float32 at generation time so a save/load cycle
is bit-exact even though all arithmetic runs in float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import List

import numpy as np

from .autodiff import EPS_NORM
from .binio import Reader, atomic_write
from .errors import FormatError

MAGIC = b"FLCP"
VERSION = 1

# Size of the shared concept vocabulary pairs sample from.  Small enough
# that candidate pairs frequently share concepts, which is what makes
# the retrieval task compositional rather than trivial.
CONCEPT_VOCAB = 12


@dataclass
class PairCorpus:
    d_in: int
    image_tokens: np.ndarray        # (n_pairs, P, d_in) float64
    text_tokens: List[np.ndarray]   # n_pairs entries, (m_i, d_in) float64
    m_max: int

    @property
    def n_pairs(self) -> int:
        return self.image_tokens.shape[0]

    @property
    def p(self) -> int:
        return self.image_tokens.shape[1]

    def equals(self, other: "PairCorpus") -> bool:
        return (
            self.d_in == other.d_in
            and self.m_max == other.m_max
            and np.array_equal(self.image_tokens, other.image_tokens)
            and len(self.text_tokens) == len(other.text_tokens)
            and all(np.array_equal(a, b)
                    for a, b in zip(self.text_tokens, other.text_tokens))
        )


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), EPS_NORM)


def _quantize(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def generate_synthetic(seed: int, n_pairs: int, p: int, m_max: int, d_in: int,
                       n_concepts: int, noise_sigma: float,
                       n_distractors: int) -> PairCorpus:
    """Plant n_concepts shared tokens per pair; texts add pool distractors.

    Every text holds n_concepts + n_distractors tokens (<= m_max).  With
    noise_sigma=0 and no distractors, each text token is an exact copy of
    one image token of its own pair.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    if p < 1 or d_in < 1:
        raise ValueError("p and d_in must be at least 1")
    if not 1 <= n_concepts <= min(p, m_max):
        raise ValueError("n_concepts must lie in [1, min(p, m_max)]")
    if not 0 <= n_distractors <= m_max - n_concepts:
        raise ValueError("n_distractors must lie in [0, m_max - n_concepts]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")

    rng = np.random.default_rng(seed)
    # Concepts are drawn per pair from one shared unit-vector vocabulary,
    # so candidate pairs overlap partially and ranking hinges on token
    # composition.  Concept subsets are kept distinct across pairs, or the
    # planted correspondence would be ambiguous.  One clutter pool serves
    # both branches: image backgrounds and text distractors are noisy
    # copies of pool rows and carry no pair identity.
    vocab_size = max(CONCEPT_VOCAB, n_concepts)
    if math.comb(vocab_size, n_concepts) < n_pairs:
        raise ValueError("not enough distinct concept subsets for n_pairs")
    vocab = _unit_rows(rng.normal(size=(vocab_size, d_in)))
    n_background = p - n_concepts
    pool_size = max(n_background, n_distractors, 1)
    pool = _unit_rows(rng.normal(size=(pool_size, d_in)))
    m = n_concepts + n_distractors

    seen = set()
    images = np.empty((n_pairs, p, d_in), dtype=np.float64)
    texts: List[np.ndarray] = []
    for i in range(n_pairs):
        while True:
            idx = rng.choice(vocab_size, size=n_concepts, replace=False)
            key = tuple(sorted(idx.tolist()))
            if key not in seen:
                seen.add(key)
                break
        concepts = vocab[idx]
        background = pool[rng.permutation(pool_size)[:n_background]]
        img = np.concatenate([concepts, background], axis=0)
        img = img + noise_sigma * rng.normal(size=img.shape)
        images[i] = _quantize(img[rng.permutation(p)])

        distractors = pool[rng.permutation(pool_size)[:n_distractors]]
        txt = np.concatenate([concepts, distractors], axis=0)
        txt = txt + noise_sigma * rng.normal(size=txt.shape)
        texts.append(_quantize(txt[rng.permutation(m)]))
    return PairCorpus(d_in=d_in, image_tokens=images, text_tokens=texts, m_max=m_max)


def to_bytes(corpus: PairCorpus) -> bytes:
    parts = [MAGIC, struct.pack("<5I", VERSION, corpus.n_pairs, corpus.p,
                                corpus.m_max, corpus.d_in)]
    for i in range(corpus.n_pairs):
        parts.append(corpus.image_tokens[i].astype("<f4").tobytes())
        txt = corpus.text_tokens[i]
        parts.append(struct.pack("<I", txt.shape[0]))
        parts.append(txt.astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> PairCorpus:
    r = Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a corpus file")
    if r.u32() != VERSION:
        raise FormatError("unsupported version")
    n_pairs, p, m_max, d_in = r.u32(), r.u32(), r.u32(), r.u32()
    if n_pairs < 1 or p < 1 or d_in < 1:
        raise FormatError("corrupt corpus header")
    images = np.empty((n_pairs, p, d_in), dtype=np.float64)
    texts: List[np.ndarray] = []
    for i in range(n_pairs):
        images[i] = r.f32_array(p * d_in).reshape(p, d_in)
        m_i = r.u32()
        if not 1 <= m_i <= m_max:
            raise FormatError("corrupt corpus record")
        texts.append(r.f32_array(m_i * d_in).reshape(m_i, d_in))
    if not r.done():
        raise FormatError("trailing bytes after final record")
    return PairCorpus(d_in=d_in, image_tokens=images, text_tokens=texts, m_max=m_max)


def save(corpus: PairCorpus, path):
    atomic_write(path, to_bytes(corpus))


def load(path) -> PairCorpus:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def fingerprint(corpus: PairCorpus) -> str:
    """Hex FNV-1a of the serialized corpus (same bytes as the file)."""
    return f"{fnv1a64(to_bytes(corpus)):016x}"
