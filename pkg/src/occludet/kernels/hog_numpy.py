"""Vectorized gradient-orientation cell histograms (numpy backend)."""

import numpy as np


def cell_histograms(img, cell_px, bins):
    """Accumulate magnitude-weighted orientation votes per cell.

    Gradients are centered differences with replicated borders; orientation
    is unsigned (mod pi) and votes split linearly between the two nearest
    bins. Returns (cells_y, cells_x, bins) float64.
    """
    h, w = img.shape
    cells_y = h // cell_px
    cells_x = w // cell_px

    gx = np.empty_like(img)
    gy = np.empty_like(img)
    gx[:, 1:-1] = img[:, 2:] - img[:, :-2]
    gx[:, 0] = img[:, 1] - img[:, 0]
    gx[:, -1] = img[:, -1] - img[:, -2]
    gy[1:-1, :] = img[2:, :] - img[:-2, :]
    gy[0, :] = img[1, :] - img[0, :]
    gy[-1, :] = img[-1, :] - img[-2, :]

    crop_y = cells_y * cell_px
    crop_x = cells_x * cell_px
    gx = gx[:crop_y, :crop_x]
    gy = gy[:crop_y, :crop_x]

    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    pos = ang / np.pi * bins - 0.5
    low = np.floor(pos)
    frac = pos - low
    bin0 = np.mod(low.astype(np.int64), bins)
    bin1 = np.mod(bin0 + 1, bins)

    rows = np.arange(crop_y) // cell_px
    cols = np.arange(crop_x) // cell_px
    cell_idx = rows[:, None] * cells_x + cols[None, :]

    hist = np.zeros(cells_y * cells_x * bins, dtype=np.float64)
    np.add.at(hist, (cell_idx * bins + bin0).ravel(), (mag * (1.0 - frac)).ravel())
    np.add.at(hist, (cell_idx * bins + bin1).ravel(), (mag * frac).ravel())
    return hist.reshape(cells_y, cells_x, bins)
