"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
fallback is always available. Set FT_BACKEND=numpy or FT_BACKEND=native to
force one (forcing native raises if the extension is missing).
"""

import os

from . import numpy_backend

_requested = os.environ.get("FT_BACKEND", "auto").lower()
if _requested not in ("auto", "native", "numpy"):
    raise ValueError(f"FT_BACKEND must be auto, native or numpy, got {_requested!r}")

_backend = numpy_backend
if _requested in ("auto", "native"):
    try:
        from . import _native as _compiled

        _backend = _compiled
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "FT_BACKEND=native but the compiled kernel extension is not built"
            ) from None

BACKEND = _backend.NAME

im2col_one = _backend.im2col_one
col2im_one = _backend.col2im_one
upsample2x = _backend.upsample2x
upsample2x_grad = _backend.upsample2x_grad
