"""Scalar-loop gradient-orientation histograms (source for the jit backend).

Same formulas as hog_numpy; kept as explicit per-pixel loops so numba can
compile them. Body must stay nopython-compatible.
"""

import numpy as np


def cell_histograms(img, cell_px, bins):
    h, w = img.shape
    cells_y = h // cell_px
    cells_x = w // cell_px
    hist = np.zeros((cells_y, cells_x, bins), dtype=np.float64)
    crop_y = cells_y * cell_px
    crop_x = cells_x * cell_px
    for y in range(crop_y):
        cy = y // cell_px
        for x in range(crop_x):
            cx = x // cell_px
            x0 = x - 1 if x > 0 else 0
            x1 = x + 1 if x < w - 1 else w - 1
            y0 = y - 1 if y > 0 else 0
            y1 = y + 1 if y < h - 1 else h - 1
            dx = img[y, x1] - img[y, x0]
            dy = img[y1, x] - img[y0, x]
            mag = np.sqrt(dx * dx + dy * dy)
            ang = np.arctan2(dy, dx) % np.pi
            pos = ang / np.pi * bins - 0.5
            low = np.floor(pos)
            frac = pos - low
            bin0 = int(low) % bins
            bin1 = (bin0 + 1) % bins
            hist[cy, cx, bin0] += mag * (1.0 - frac)
            hist[cy, cx, bin1] += mag * frac
    return hist
