"""JIT-compiled twin of the grid min-cut solver."""

from numba import njit

from . import mincut as _pure

solve_grid_batch = njit(cache=True)(_pure.solve_grid_batch)
