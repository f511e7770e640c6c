"""Block-feature extraction: HOG grids, image pyramids, sliding windows.

Images are converted to a dense grid of gradient-orientation block
descriptors (2x2-cell blocks of 8x8-pixel cells, 9 unsigned bins, q=36 by
default). Pyramids downscale by a factor of 1.2 per level, and every level
is padded with half a window of zero-feature blocks on each side so that
objects truncated by the image boundary still produce windows; padding
blocks are flagged non-inferable and their visibility stays clamped off.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import kernels

DEFAULT_CELL_PX = 8
DEFAULT_BINS = 9
DEFAULT_SCALE_FACTOR = 1.2
DEFAULT_STRIDE_PX = 6
BLOCK_CLIP = 0.2
_NORM_EPS = 1e-6

FEATURE_DUMP_MAGIC = b"OCDFEAT1"


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with luminance values in [0, 1], row-major."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("image must be 2-D with positive dimensions")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def load_image(path) -> GrayImage:
    """Read an 8-bit grayscale or RGB PNG and convert to luminance."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    else:
        arr = arr.astype(np.float64)
    return GrayImage(arr / 255.0)


def save_image(img: GrayImage, path) -> None:
    from PIL import Image

    data = np.clip(np.round(img.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


@dataclass
class PyramidLevel:
    """One pyramid level: a padded block-feature grid at a fixed scale."""

    scale: float
    features: np.ndarray   # (grid_h, grid_w, q)
    inferable: np.ndarray  # (grid_h, grid_w) bool, False on padding blocks
    pad_x: int = 0
    pad_y: int = 0

    @property
    def grid_h(self) -> int:
        return self.features.shape[0]

    @property
    def grid_w(self) -> int:
        return self.features.shape[1]

    @property
    def block_dim(self) -> int:
        return self.features.shape[2]


@dataclass
class WindowFeatures:
    """Features of one window: a (h, w, q) block grid plus inferable flags."""

    blocks: np.ndarray     # (win_h, win_w, q)
    inferable: np.ndarray  # (win_h, win_w) bool
    origin: tuple[int, int, int] = (0, 0, 0)  # (level index, row, col)

    @property
    def block_count(self) -> int:
        return self.blocks.shape[0] * self.blocks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocks.shape[0], self.blocks.shape[1]


def hog_extract(img: GrayImage, cell_px: int = DEFAULT_CELL_PX, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Extract the block-descriptor grid of an image.

    Blocks aggregate 2x2 cells at one-cell stride (q = 4 * bins). Each block
    is L2-normalized with epsilon guard, clipped at 0.2, renormalized, and
    clamped at 0.2 once more so every entry stays within [0, 0.2] and the
    block norm within 1.
    """
    if cell_px < 2:
        raise ValueError("cell_px must be >= 2")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    cells_y = img.height // cell_px
    cells_x = img.width // cell_px
    if cells_y < 2 or cells_x < 2:
        raise ValueError("image too small for a 2x2-cell block")
    hist = kernels.cell_histograms(img.values, cell_px, bins)
    return _blocks_from_cells(hist)


def _blocks_from_cells(hist: np.ndarray) -> np.ndarray:
    cells_y, cells_x, bins = hist.shape
    blocks = np.concatenate(
        [hist[:-1, :-1], hist[:-1, 1:], hist[1:, :-1], hist[1:, 1:]], axis=2
    )
    norm = np.sqrt(np.sum(blocks**2, axis=2, keepdims=True) + _NORM_EPS**2)
    blocks = blocks / norm
    blocks = np.minimum(blocks, BLOCK_CLIP)
    norm = np.sqrt(np.sum(blocks**2, axis=2, keepdims=True) + _NORM_EPS**2)
    blocks = blocks / norm
    return np.minimum(blocks, BLOCK_CLIP)


def _bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = values.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bot = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def pad_features(level: PyramidLevel, window_block_w: int, window_block_h: int) -> PyramidLevel:
    """Pad a level with half a window of zero blocks per side (non-inferable)."""
    pad_x = (window_block_w + 1) // 2
    pad_y = (window_block_h + 1) // 2
    if pad_x == 0 and pad_y == 0:
        return level
    gh, gw, q = level.features.shape
    feats = np.zeros((gh + 2 * pad_y, gw + 2 * pad_x, q), dtype=level.features.dtype)
    feats[pad_y:pad_y + gh, pad_x:pad_x + gw] = level.features
    inferable = np.zeros((gh + 2 * pad_y, gw + 2 * pad_x), dtype=bool)
    inferable[pad_y:pad_y + gh, pad_x:pad_x + gw] = level.inferable
    return PyramidLevel(level.scale, feats, inferable,
                        pad_x=level.pad_x + pad_x, pad_y=level.pad_y + pad_y)


def build_pyramid(
    img: GrayImage,
    window_block_w: int,
    window_block_h: int,
    cell_px: int = DEFAULT_CELL_PX,
    bins: int = DEFAULT_BINS,
    scale_factor: float = DEFAULT_SCALE_FACTOR,
) -> list[PyramidLevel]:
    """Build padded feature levels at scales s^0, s^1, ... while the
    unpadded block grid still fits one window."""
    levels = []
    k = 0
    while True:
        scale = scale_factor**k
        lvl_h = int(img.height / scale)
        lvl_w = int(img.width / scale)
        grid_h = lvl_h // cell_px - 1
        grid_w = lvl_w // cell_px - 1
        if grid_h < window_block_h or grid_w < window_block_w:
            break
        if k == 0:
            values = img.values
        else:
            values = _bilinear_resize(img.values, lvl_h, lvl_w)
        feats = hog_extract(GrayImage(np.clip(values, 0.0, 1.0)), cell_px, bins)
        raw = PyramidLevel(scale, feats, np.ones(feats.shape[:2], dtype=bool))
        levels.append(pad_features(raw, window_block_w, window_block_h))
        k += 1
    if not levels:
        raise ValueError("image too small: the window does not fit the base level")
    return levels


def block_stride(stride_px: int, cell_px: int = DEFAULT_CELL_PX) -> int:
    """Convert the pixel stride to the block lattice (half-up rounding)."""
    return max(1, int(math.floor(stride_px / cell_px + 0.5)))


def enumerate_windows(
    level: PyramidLevel,
    stride_px: int,
    window_block_w: int,
    window_block_h: int,
    cell_px: int = DEFAULT_CELL_PX,
    level_index: int = 0,
) -> Iterator[WindowFeatures]:
    """Yield every window inside the padded grid exactly once (row-major)."""
    if stride_px < 1:
        raise ValueError("stride_px must be >= 1")
    step = block_stride(stride_px, cell_px)
    for row in range(0, level.grid_h - window_block_h + 1, step):
        for col in range(0, level.grid_w - window_block_w + 1, step):
            yield WindowFeatures(
                blocks=level.features[row:row + window_block_h, col:col + window_block_w],
                inferable=level.inferable[row:row + window_block_h, col:col + window_block_w],
                origin=(level_index, row, col),
            )


def window_count(grid_w: int, grid_h: int, window_block_w: int, window_block_h: int, step: int = 1) -> int:
    """Closed-form number of windows produced by enumerate_windows."""
    if grid_w < window_block_w or grid_h < window_block_h:
        return 0
    nx = (grid_w - window_block_w) // step + 1
    ny = (grid_h - window_block_h) // step + 1
    return nx * ny


def write_feature_dump(levels: list[PyramidLevel], path) -> None:
    """Debug dump: magic header then per-level scale/dims/f32 data records."""
    with open(path, "wb") as fh:
        fh.write(FEATURE_DUMP_MAGIC)
        for lvl in levels:
            fh.write(struct.pack("<dIII", lvl.scale, lvl.grid_w, lvl.grid_h, lvl.block_dim))
            fh.write(np.ascontiguousarray(lvl.features, dtype="<f4").tobytes())


def read_feature_dump(path) -> list[PyramidLevel]:
    with open(path, "rb") as fh:
        magic = fh.read(len(FEATURE_DUMP_MAGIC))
        if magic != FEATURE_DUMP_MAGIC:
            raise ValueError("bad magic in feature dump")
        levels = []
        while True:
            header = fh.read(struct.calcsize("<dIII"))
            if not header:
                break
            if len(header) != struct.calcsize("<dIII"):
                raise ValueError("truncated feature dump header")
            scale, grid_w, grid_h, q = struct.unpack("<dIII", header)
            count = grid_w * grid_h * q
            data = fh.read(count * 4)
            if len(data) != count * 4:
                raise ValueError("truncated feature dump data")
            feats = np.frombuffer(data, dtype="<f4").astype(np.float64)
            feats = feats.reshape(grid_h, grid_w, q)
            levels.append(PyramidLevel(scale, feats, np.ones((grid_h, grid_w), dtype=bool)))
    return levels
