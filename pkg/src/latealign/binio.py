"""Little-endian binary IO helpers shared by the corpus and checkpoint formats."""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError


class Reader:
    """Cursor over a byte buffer; running past the end is a format error."""

    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.data):
            raise FormatError("unexpected end of file")
        out = self.data[self.at:self.at + n]
        self.at += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(count * 4)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def done(self) -> bool:
        return self.at == len(self.data)


def atomic_write(path, data: bytes):
    """Write via a temp file and rename, so failures leave no partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
