"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``POSETRANSFER_PURE=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
quintic_eval = _kernels_py.quintic_eval

if os.environ.get("POSETRANSFER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        quintic_eval = _ckernels.quintic_eval

__all__ = ["BACKEND", "quintic_eval"]
