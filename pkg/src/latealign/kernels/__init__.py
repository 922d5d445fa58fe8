"""Hot-path scoring kernels.

The compiled Cython extension is preferred; the pure-numpy twin is used
when the extension is unavailable or when LATEALIGN_PURE_PYTHON is set
to a non-empty value other than "0".  Both expose the same two
functions; tests pin them against each other.
"""

import os

from . import fine_np

if os.environ.get("LATEALIGN_PURE_PYTHON", "0") not in ("", "0"):
    _impl = fine_np
    HAVE_COMPILED = False
else:
    try:
        from . import _fine as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        _impl = fine_np
        HAVE_COMPILED = False

BACKEND = "compiled" if HAVE_COMPILED else "numpy"

fine_forward = _impl.fine_forward
fine_backward = _impl.fine_backward

__all__ = ["fine_forward", "fine_backward", "fine_np", "BACKEND", "HAVE_COMPILED"]
