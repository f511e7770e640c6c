"""End-to-end per-image detection.

Builds the feature pyramid, scores every anchor with every mixture
component (vectorized sliding-window correlation for the linear terms,
batched min-cut for the visibility inference), keeps anchors whose detector
score clears the threshold, and predicts a pixel bounding box from the
component's average-box prior contracted around the inferred visible
blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rle
from .blockgrid import (
    DEFAULT_BINS,
    DEFAULT_CELL_PX,
    DEFAULT_SCALE_FACTOR,
    DEFAULT_STRIDE_PX,
    GrayImage,
    PyramidLevel,
    block_stride,
    build_pyramid,
)
from .boxes import box_intersection, clip_box
from .mixture import MixtureModel
from .visibility import VisibilityMask, boundary_counts, response_batch, upper_bound_batch


@dataclass
class DetectConfig:
    cell_px: int = DEFAULT_CELL_PX
    bins: int = DEFAULT_BINS
    stride_px: int = DEFAULT_STRIDE_PX
    scale_factor: float = DEFAULT_SCALE_FACTOR
    use_filter: bool = True

    @classmethod
    def from_model(cls, model: MixtureModel, **overrides) -> "DetectConfig":
        hog = model.metadata.get("hog", {})
        base = dict(
            cell_px=hog.get("cell_px", DEFAULT_CELL_PX),
            bins=hog.get("bins", DEFAULT_BINS),
            stride_px=hog.get("stride_px", DEFAULT_STRIDE_PX),
            scale_factor=hog.get("scale_factor", DEFAULT_SCALE_FACTOR),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class Detection:
    """One detection in original-image coordinates."""

    box: tuple[float, float, float, float]
    raw_score: float
    norm_score: float
    component: int
    mask: VisibilityMask
    scale: float
    anchor: tuple[int, int]            # (row, col) in the padded level grid
    window_box: tuple[float, float, float, float]  # unclipped window extent, px
    level_index: int = 0
    image: Optional[str] = None


@dataclass
class AnchorScore:
    """Best component response at one anchor (internal scan record)."""

    row: int
    col: int
    score: float
    component: int
    labels: np.ndarray  # (win_h, win_w) uint8
    fixed: np.ndarray   # (win_h, win_w) bool


def window_pixel_box(
    row: int, col: int, win_h: int, win_w: int, level: PyramidLevel, cell_px: int
) -> tuple[float, float, float, float]:
    """Window extent in original-image pixels (may exceed the image)."""
    s = level.scale
    x0 = (col - level.pad_x) * cell_px * s
    y0 = (row - level.pad_y) * cell_px * s
    return (x0, y0, (win_w + 1) * cell_px * s, (win_h + 1) * cell_px * s)


def scan_level(
    level: PyramidLevel,
    model: MixtureModel,
    cfg: DetectConfig,
    threshold: float,
    anchor_mask: Optional[np.ndarray] = None,
) -> list[AnchorScore]:
    """Score all anchors of one level.

    Anchors are block positions (at the configured stride) where the
    largest component window still fits the padded grid; every component is
    evaluated at each anchor, clipped to its own shape. With the filter
    enabled a component is only fully solved where its upper bound clears
    the threshold. anchor_mask (full anchor lattice, pre-stride) restricts
    scoring to selected anchors. Returns records with score > threshold in
    (row, col) order.
    """
    max_h, max_w = model.max_window_shape
    gh, gw = level.grid_h, level.grid_w
    if gh < max_h or gw < max_w:
        return []
    step = block_stride(cfg.stride_px, cfg.cell_px)
    n_rows = gh - max_h + 1
    n_cols = gw - max_w + 1
    rows = np.arange(0, n_rows, step)
    cols = np.arange(0, n_cols, step)
    ny, nx = len(rows), len(cols)

    best = np.full((ny, nx), -np.inf)
    best_comp = np.full((ny, nx), -1, dtype=np.int64)
    labels_per_comp: list[Optional[np.ndarray]] = []
    solved_per_comp: list[Optional[np.ndarray]] = []

    active = np.ones((ny, nx), dtype=bool)
    if anchor_mask is not None:
        active = anchor_mask[rows][:, cols]

    not_inferable = ~level.inferable
    for comp in model.components:
        wh, ww = comp.window_block_h, comp.window_block_w
        view = sliding_window_view(level.features, (wh, ww), axis=(0, 1))
        view = view[:n_rows:step, :n_cols:step]
        terms = np.einsum(
            "YXqhw,hwq->YXhw", view, comp.weights.astype(np.float64), optimize=True
        )
        fixed = sliding_window_view(not_inferable, (wh, ww), axis=(0, 1))
        fixed = fixed[:n_rows:step, :n_cols:step]

        if model.visibility_enabled:
            ub = upper_bound_batch(
                terms.reshape(-1, wh, ww), fixed.reshape(-1, wh, ww), comp
            ).reshape(ny, nx)
            solve = active & ((ub > threshold) if cfg.use_filter else True)
            scores = np.full((ny, nx), -np.inf)
            labels = np.zeros((ny, nx, wh, ww), dtype=np.uint8)
            if np.any(solve):
                sel_terms = terms[solve]
                sel_fixed = np.ascontiguousarray(fixed[solve])
                s, lab = response_batch(sel_terms, sel_fixed, comp, model.ising)
                scores[solve] = s
                labels[solve] = lab
        else:
            # visibility disabled: every flag on, zero-feature padding
            # blocks contribute nothing, and the bound is the score itself
            scores = np.where(active, comp.bias + terms.sum(axis=(2, 3)), -np.inf)
            labels = np.where(fixed, 0, 1).astype(np.uint8)

        take = scores > best  # strictly greater: lowest id wins ties
        best = np.where(take, scores, best)
        best_comp = np.where(take, comp.component_id, best_comp)
        labels_per_comp.append(labels)
        solved_per_comp.append(fixed)

    out: list[AnchorScore] = []
    for iy in range(ny):
        for ix in range(nx):
            if best[iy, ix] <= threshold or best_comp[iy, ix] < 0:
                continue
            m = int(best_comp[iy, ix])
            comp = model.components[m]
            out.append(
                AnchorScore(
                    row=int(rows[iy]),
                    col=int(cols[ix]),
                    score=float(best[iy, ix]),
                    component=m,
                    labels=np.asarray(labels_per_comp[m][iy, ix]),
                    fixed=np.asarray(solved_per_comp[m][iy, ix]).astype(bool),
                )
            )
    return out


def predict_box(det: Detection, model: MixtureModel, image_w: float, image_h: float):
    """Pixel box prediction: average-box prior, contracted around the
    visible blocks when they indicate a smaller object, clipped to the
    image."""
    comp = model.components[det.component]
    wx, wy, wpw, wph = det.window_box
    ax, ay, aw, ah = comp.avg_box
    avg = (wx + ax * wpw, wy + ay * wph, aw * wpw, ah * wph)

    flags = det.mask.flags
    vis_rows = np.flatnonzero(flags.any(axis=1))
    vis_cols = np.flatnonzero(flags.any(axis=0))
    if len(vis_rows) == 0:
        return clip_box(avg, image_w, image_h)
    cell = wpw / (flags.shape[1] + 1)  # block lattice pitch in pixels
    cell_y = wph / (flags.shape[0] + 1)
    vx0 = wx + vis_cols[0] * cell
    vx1 = wx + (vis_cols[-1] + 2) * cell
    vy0 = wy + vis_rows[0] * cell_y
    vy1 = wy + (vis_rows[-1] + 2) * cell_y
    vis = (vx0, vy0, vx1 - vx0, vy1 - vy0)
    if vis[2] < avg[2] or vis[3] < avg[3]:
        inter = box_intersection(avg, vis)
        if inter[2] > 0 and inter[3] > 0:
            return clip_box(inter, image_w, image_h)
    return clip_box(avg, image_w, image_h)


def detect(
    img: GrayImage,
    model: MixtureModel,
    threshold: float = -1.0,
    cfg: Optional[DetectConfig] = None,
    image_name: Optional[str] = None,
) -> list[Detection]:
    """Detect objects in one image; detections come back in deterministic
    (level, row, col) order with normalized scores >= 0."""
    cfg = cfg or DetectConfig.from_model(model)
    max_h, max_w = model.max_window_shape
    levels = build_pyramid(
        img, max_w, max_h, cfg.cell_px, cfg.bins, cfg.scale_factor
    )
    detections: list[Detection] = []
    for li, level in enumerate(levels):
        for rec in scan_level(level, model, cfg, threshold):
            comp = model.components[rec.component]
            wbox = window_pixel_box(
                rec.row, rec.col, comp.window_block_h, comp.window_block_w, level, cfg.cell_px
            )
            mask = VisibilityMask(flags=rec.labels.astype(bool), fixed=rec.fixed)
            det = Detection(
                box=(0.0, 0.0, 0.0, 0.0),
                raw_score=rec.score,
                norm_score=rec.score - threshold,
                component=rec.component,
                mask=mask,
                scale=level.scale,
                anchor=(rec.row, rec.col),
                window_box=wbox,
                level_index=li,
                image=image_name,
            )
            det.box = predict_box(det, model, img.width, img.height)
            detections.append(det)
    return detections


def detection_record(det: Detection) -> dict:
    h, w = det.mask.shape
    rec = {
        "image": det.image,
        "box": [round(float(v), 4) for v in det.box],
        "score": det.raw_score,
        "norm_score": det.norm_score,
        "component": det.component,
        "scale": det.scale,
        "mask": rle.rle_encode(det.mask.flags),
        "grid": [w, h],
        "window_box": [float(v) for v in det.window_box],
        "anchor": [int(det.anchor[0]), int(det.anchor[1])],
    }
    return rec


def detection_from_record(rec: dict) -> Detection:
    w, h = rec["grid"]
    flags = rle.rle_decode(rec["mask"], (h, w))
    return Detection(
        box=tuple(rec["box"]),
        raw_score=float(rec["score"]),
        norm_score=float(rec["norm_score"]),
        component=int(rec["component"]),
        mask=VisibilityMask(flags=flags, fixed=np.zeros_like(flags)),
        scale=float(rec["scale"]),
        anchor=tuple(rec.get("anchor", (0, 0))),
        window_box=tuple(rec["window_box"]),
        image=rec.get("image"),
    )


def write_detections(path, detections: list[Detection], extra: Optional[list[dict]] = None) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for i, det in enumerate(detections):
            rec = detection_record(det)
            if extra is not None:
                rec.update(extra[i])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_detection_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
