"""Hot numerical kernels, compiled when available.

The Cython extension ``_core`` is used if it was built; otherwise the NumPy
implementations in ``_fallback`` are used. Setting the environment variable
``BARRIER_EKI_PURE_PYTHON=1`` forces the fallback.

Attributes
----------
BACKEND : str
    ``"cython"`` or ``"python"``.
"""

import importlib
import os

from . import _fallback

_core = None
if os.environ.get("BARRIER_EKI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        _core = importlib.import_module(f"{__name__}._core")
    except ImportError:  # extension not built
        _core = None

_impl = _core if _core is not None else _fallback
BACKEND = "cython" if _core is not None else "python"

ensemble_moments = _impl.ensemble_moments
p1_assemble_dense = _impl.p1_assemble_dense
rms_error_norm = _impl.rms_error_norm


def backends():
    """Mapping of available backend name to kernel module."""
    out = {"python": _fallback}
    if _core is not None:
        out["cython"] = _core
    return out
