"""Learned online video stabilization trained on synthetic video pairs."""
import os as _os

__version__ = "0.1.0"

# must run before numpy loads its BLAS
_threads = _os.environ.get("STABKIT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import StabkitError  # noqa: E402
from .geometry import Homography  # noqa: E402
from .image import Frame  # noqa: E402

__all__ = ["Frame", "Homography", "StabkitError", "__version__"]
