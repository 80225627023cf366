"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``DRAPE_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available():
    """Mapping of backend name to module for every importable backend."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


if _compiled is not None and not os.environ.get("DRAPE_PURE_PYTHON"):
    backend = _compiled
else:
    backend = _kernels_py

BACKEND = backend.NAME
stvk = backend.stvk
bending = backend.bending
capsule_sdf = backend.capsule_sdf
capsule_collision = backend.capsule_collision
lbs_forward = backend.lbs_forward
lbs_backward = backend.lbs_backward
