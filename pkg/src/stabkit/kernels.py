"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``STABKIT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("STABKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

bilinear_sample = _impl.bilinear_sample
sad_block_match = _impl.sad_block_match

__all__ = ["BACKEND", "bilinear_sample", "sad_block_match"]
