"""Kernel selection.

The compiled extension is used when it imports cleanly; setting
``INFOTSLS_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("INFOTSLS_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

posterior_moments = kernels.posterior_moments
mlr_violations = kernels.mlr_violations
qr_pivoted = kernels.qr_pivoted
apply_qt = kernels.apply_qt

__all__ = ["BACKEND", "posterior_moments", "mlr_violations", "qr_pivoted", "apply_qt"]
