"""Warp kernel backend selection.

The compiled Cython kernels are preferred when built; the pure-NumPy
implementation is a drop-in fallback with identical semantics.  Set
FRONTO_KERNELS=numpy or FRONTO_KERNELS=cython to force a backend
(forcing cython raises if the extension is unavailable).
"""

import os

_requested = os.environ.get("FRONTO_KERNELS", "").strip().lower()

if _requested not in ("", "numpy", "cython"):
    raise RuntimeError(f"FRONTO_KERNELS must be 'numpy' or 'cython', got {_requested!r}")

if _requested == "numpy":
    from . import _warp_np as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _warp_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import _warp_np as _impl  # type: ignore[no-redef]

        BACKEND = "numpy"

warp_bilinear = _impl.warp_bilinear
warp_bilinear_grad_matrix = _impl.warp_bilinear_grad_matrix

__all__ = ["BACKEND", "warp_bilinear", "warp_bilinear_grad_matrix"]
