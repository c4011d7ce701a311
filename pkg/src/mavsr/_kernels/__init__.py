"""Hot-kernel backend selection.

The compiled Cython extension is used when it imported successfully and the
``MAVSR_FORCE_FALLBACK`` environment variable is unset; otherwise the
pure-numpy fallback takes over. Both expose the same two functions:

    dconv3x3_forward(x[C, N, H, W], w[C, 3, 3], b[C])
    lk_refine(prev, next, ix, iy, px, py, u0, v0, half_win, max_iters,
              step_eps, min_eig_eps)
"""

import os

from . import _fallback

try:
    from . import _core

    HAVE_EXT = True
except ImportError:
    _core = None
    HAVE_EXT = False

if HAVE_EXT and not os.environ.get("MAVSR_FORCE_FALLBACK"):
    BACKEND = "ext"
    dconv3x3_forward = _core.dconv3x3_forward
    lk_refine = _core.lk_refine
else:
    BACKEND = "fallback"
    dconv3x3_forward = _fallback.dconv3x3_forward
    lk_refine = _fallback.lk_refine
