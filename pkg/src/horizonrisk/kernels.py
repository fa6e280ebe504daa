"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``HORIZONRISK_PURE=1`` to force the numpy kernels.
"""

import os

from . import _fallback

if os.environ.get("HORIZONRISK_PURE", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

sweep_affine = _impl.sweep_affine
volterra_diagonal = _impl.volterra_diagonal
dual_sweep = _impl.dual_sweep
measure_sweep = _impl.measure_sweep

__all__ = ["BACKEND", "sweep_affine", "volterra_diagonal", "dual_sweep", "measure_sweep"]
