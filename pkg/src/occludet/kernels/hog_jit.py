"""JIT-compiled twin of the scalar-loop HOG histograms."""

from numba import njit

from . import hog_loops as _loops

cell_histograms = njit(cache=True)(_loops.cell_histograms)
