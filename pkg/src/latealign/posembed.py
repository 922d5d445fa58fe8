"""Prefix-preserving stretch of a learned absolute positional table.

A well-trained prefix of the table is copied verbatim; the remainder is
linearly interpolated at ratio 1/factor, so a table of length L becomes
keep + (L - keep) * factor rows.  The stock configuration (keep=20,
factor=4) turns a 77-row table into 248 rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import as_matrix


@dataclass
class PositionalTable:
    entries: np.ndarray  # (length, dim)

    def __post_init__(self):
        self.entries = as_matrix(self.entries, "positional table")
        if self.length < 1:
            raise ValueError("positional table must have at least one row")

    @property
    def length(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def stretch(pe: PositionalTable, keep: int, factor: int) -> PositionalTable:
    """Stretch ``pe`` to keep + (length - keep) * factor rows.

    Rows [0, keep) are copied bit-for-bit.  Output row p >= keep samples
    the source at s = keep + (p - keep) / factor via linear interpolation,
    clamping the upper neighbor to the last source row.
    """
    if keep < 0:
        raise ValueError("keep must be nonnegative")
    if keep >= pe.length:
        raise ValueError("nothing to stretch")
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    src = pe.entries
    out_len = keep + (pe.length - keep) * factor
    out = np.empty((out_len, pe.dim), dtype=np.float64)
    out[:keep] = src[:keep]

    p = np.arange(keep, out_len, dtype=np.float64)
    s = keep + (p - keep) / factor
    i0 = np.floor(s).astype(np.intp)
    w = s - i0
    i1 = np.minimum(i0 + 1, pe.length - 1)
    out[keep:] = (1.0 - w)[:, None] * src[i0] + w[:, None] * src[i1]
    return PositionalTable(out)
