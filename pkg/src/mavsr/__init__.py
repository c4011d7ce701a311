"""Motion-aware segment-wise video reconstruction with anchor-frame guidance."""

from .errors import MavsrError
from .similarity import AffineMatrix, MotionParams

__version__ = "0.1.0"

__all__ = ["AffineMatrix", "MavsrError", "MotionParams", "__version__"]
