"""Hot numeric kernels with selectable backend.

Set OCCLUDET_BACKEND=numpy to force the pure numpy/Python implementations,
OCCLUDET_BACKEND=numba to require the jit-compiled ones. Default ("auto")
uses numba when importable and falls back to numpy otherwise.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("OCCLUDET_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"OCCLUDET_BACKEND must be auto, numba or numpy, got {_requested!r}")

if _requested == "numpy":
    BACKEND = "numpy"
else:
    try:
        import numba  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        BACKEND = "numpy"

if BACKEND == "numba":
    from .hog_jit import cell_histograms
    from .mincut_jit import solve_grid_batch
else:
    from .hog_numpy import cell_histograms
    from .mincut import solve_grid_batch


def mincut_batch(scores: np.ndarray, fixed: np.ndarray, unary_bias: float, alpha: float) -> np.ndarray:
    """Solve a batch of window labelings; returns (n, H, W) uint8 labels."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    fixed = np.ascontiguousarray(fixed, dtype=np.bool_)
    labels = np.empty(scores.shape, dtype=np.uint8)
    if scores.size:
        solve_grid_batch(scores, fixed, float(unary_bias), float(alpha), labels)
    return labels


__all__ = ["BACKEND", "cell_histograms", "mincut_batch", "solve_grid_batch"]
