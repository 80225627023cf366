"""Reduced-space quasi-static garment draping."""
from .errors import (DegeneracyError, DimensionError, DrapeError, MalformedInputError, NumericFailure,
                     TopologyError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DegeneracyError", "DimensionError", "DrapeError", "MalformedInputError", "NumericFailure",
    "TopologyError", "__version__",
]
