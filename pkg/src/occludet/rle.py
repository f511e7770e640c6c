"""Run-length encoding for binary block masks.

Masks are flattened row-major and encoded as a list of alternating run
lengths, starting with a run of zeros (which may be empty). This keeps the
JSON representation of mostly-contiguous visibility patterns short.
"""

from __future__ import annotations

import numpy as np


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a boolean array as alternating zero/one run lengths.

    The first run counts zeros; an empty list encodes an empty mask.
    """
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    # boundaries between runs
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(starts).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    """Decode run lengths back into a boolean array of the given shape."""
    n = int(shape[0]) * int(shape[1])
    out = np.zeros(n, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0:
            raise ValueError("negative run length in RLE data")
        if value:
            out[pos:pos + run] = True
        pos += run
        value = not value
    if pos != n:
        raise ValueError(f"RLE data covers {pos} cells, expected {n}")
    return out.reshape(shape)
