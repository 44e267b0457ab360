"""Backend selection for the convolution kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback. ``UNIT_DDPM_BACKEND=python`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
im2col = _fallback.im2col
col2im = _fallback.col2im

if os.environ.get("UNIT_DDPM_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "native"
        im2col = _kernels.im2col
        col2im = _kernels.col2im


def get_backend(name: str):
    """Return ``(im2col, col2im)`` for an explicit backend name."""
    if name == "python":
        return _fallback.im2col, _fallback.col2im
    if name == "native":
        from . import _kernels

        return _kernels.im2col, _kernels.col2im
    raise ValueError(f"unknown kernel backend {name!r}")


def native_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
