"""Visibility-aware non-maximum suppression by detection covering.

All detections of a scene are projected onto a common block grid (the
padded base-scale grid): per detection, one row of visible-block coverage
bits and one row holding its normalized score on every footprint block.
The kept subset maximizes the summed per-block score roof subject to a cap
on pairwise visible-block overlap, solved to global optimality by
best-first branch-and-bound. A conventional greedy box-overlap scheme is
included as the comparison baseline.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxes import box_area, box_intersection
from .detector import Detection

log = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 10_000_000


@dataclass(frozen=True)
class SceneGrid:
    """Common block grid covering the padded base-scale level."""

    b_x: int
    b_y: int
    pad_x: int
    pad_y: int
    cell_px: int = 8

    @property
    def size(self) -> int:
        return self.b_x * self.b_y


def scene_grid_for(image_w: int, image_h: int, max_window: tuple[int, int], cell_px: int = 8) -> SceneGrid:
    """Grid of the padded base level for an image and maximum window shape."""
    max_h, max_w = max_window
    grid_w = image_w // cell_px - 1
    grid_h = image_h // cell_px - 1
    pad_x = (max_w + 1) // 2
    pad_y = (max_h + 1) // 2
    return SceneGrid(
        b_x=grid_w + 2 * pad_x, b_y=grid_h + 2 * pad_y, pad_x=pad_x, pad_y=pad_y, cell_px=cell_px
    )


@dataclass
class CoverageMatrices:
    """Row-per-detection coverage: visibility bits and projected scores."""

    visible: np.ndarray  # (n, b_y * b_x) bool
    score: np.ndarray    # (n, b_y * b_x) float64, >= 0


@dataclass
class SceneInterpretation:
    selected: tuple[int, ...]
    energy: float


def nearest_neighbor_resample(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample of a binary grid (cell-center sampling)."""
    in_h, in_w = mask.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return mask[np.ix_(ys, xs)]


def detection_footprint(det: Detection, scene: SceneGrid) -> tuple[int, int, int, int]:
    """(row0, col0, height, width) of the detection's window on the scene grid."""
    wx, wy, wpw, wph = det.window_box
    grid_h, grid_w = det.mask.shape
    col0 = int(np.floor(wx / (scene.cell_px * 1.0) + 0.5)) + scene.pad_x
    row0 = int(np.floor(wy / (scene.cell_px * 1.0) + 0.5)) + scene.pad_y
    fw = max(1, int(np.floor(grid_w * det.scale + 0.5)))
    fh = max(1, int(np.floor(grid_h * det.scale + 0.5)))
    return row0, col0, fh, fw


def build_matrices(detections: Sequence[Detection], scene: SceneGrid) -> CoverageMatrices:
    """Project detections onto the scene grid.

    Visibility flags are nearest-neighbor resampled onto the footprint;
    the score row carries the normalized score on every footprint block,
    visible or not. Footprints poking outside the grid are clipped.
    """
    n = len(detections)
    visible = np.zeros((n, scene.b_y, scene.b_x), dtype=bool)
    score = np.zeros((n, scene.b_y, scene.b_x), dtype=np.float64)
    for j, det in enumerate(detections):
        if det.norm_score < 0:
            raise ValueError("normalized detection scores must be >= 0")
        row0, col0, fh, fw = detection_footprint(det, scene)
        resampled = nearest_neighbor_resample(det.mask.flags, fh, fw)
        r0, c0 = max(0, row0), max(0, col0)
        r1, c1 = min(scene.b_y, row0 + fh), min(scene.b_x, col0 + fw)
        if r0 >= r1 or c0 >= c1:
            log.warning("detection footprint entirely outside the scene grid")
            continue
        if (r0, c0, r1, c1) != (row0, col0, row0 + fh, col0 + fw):
            log.warning("clipping detection footprint to the scene grid")
        visible[j, r0:r1, c0:c1] = resampled[r0 - row0:r1 - row0, c0 - col0:c1 - col0]
        score[j, r0:r1, c0:c1] = det.norm_score
    return CoverageMatrices(visible=visible.reshape(n, -1), score=score.reshape(n, -1))


def overlap(l: int, k: int, visible: np.ndarray) -> float:
    """Shared visible blocks over the union; 0 when the union is empty."""
    inter = np.count_nonzero(visible[l] & visible[k])
    union = np.count_nonzero(visible[l] | visible[k])
    return inter / union if union else 0.0


def overlap_matrix(visible: np.ndarray) -> np.ndarray:
    n = visible.shape[0]
    v = visible.astype(np.float64)
    inter = v @ v.T
    counts = v.sum(axis=1)
    union = counts[:, None] + counts[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(union > 0, inter / union, 0.0)
    return r


def interpretation_energy(selected: Sequence[int], score: np.ndarray) -> float:
    """Sum over scene blocks of the best selected score covering the block."""
    idx = list(selected)
    if not idx:
        return 0.0
    return float(score[idx].max(axis=0).sum())


def bound(
    selected: Sequence[int],
    n_detections: int,
    visible: np.ndarray,
    score: np.ndarray,
    eta: float,
    r_matrix: Optional[np.ndarray] = None,
) -> float:
    """Roof energy of the interpretation extended with every remaining
    detection still compatible with all selected ones; dominates the energy
    of every feasible superset."""
    if r_matrix is None:
        r_matrix = overlap_matrix(visible)
    sel = list(selected)
    candidates = np.ones(n_detections, dtype=bool)
    for s in sel:
        candidates &= r_matrix[s] <= eta
        candidates[s] = False
    rows = sel + list(np.flatnonzero(candidates))
    if not rows:
        return 0.0
    return float(score[rows].max(axis=0).sum())


def suppress(
    detections: Sequence[Detection],
    eta: float,
    scene: SceneGrid,
    node_budget: int = DEFAULT_NODE_BUDGET,
    stats: Optional[dict] = None,
) -> SceneInterpretation:
    """Globally optimal covering NMS by best-first branch-and-bound.

    Nodes grow canonically (only detections with index above the node's
    maximum are added), so no subset is generated twice; the priority queue
    is keyed by the node bound, ties broken toward larger subsets then
    lexicographic order. Exceeding the node budget raises instead of
    returning an approximation.
    """
    n = len(detections)
    if n == 0:
        if stats is not None:
            stats.update(expansions=0, expanded_subsets=[])
        return SceneInterpretation(selected=(), energy=0.0)
    mats = build_matrices(detections, scene)
    r_matrix = overlap_matrix(mats.visible)
    score = mats.score

    compat = r_matrix <= eta
    np.fill_diagonal(compat, False)

    root_allowed = np.ones(n, dtype=bool)
    roof = float(score.max(axis=0).sum())

    best_set: tuple[int, ...] = ()
    best_energy = 0.0
    expansions = 0
    expanded: list[tuple[int, ...]] = []

    counter = itertools.count()
    # heap entries: (-bound, -|S|, subset, tiebreak, allowed-mask, blockmax)
    heap = [(-roof, 0, (), next(counter), root_allowed, None)]
    while heap:
        neg_bound, _, subset, _, allowed, blockmax = heapq.heappop(heap)
        if -neg_bound <= best_energy:
            break  # nothing left on the queue can beat the incumbent
        expansions += 1
        if expansions > node_budget:
            raise RuntimeError(f"B&B budget exceeded ({node_budget} node expansions)")
        if stats is not None:
            expanded.append(subset)
        start = subset[-1] + 1 if subset else 0
        for d in range(start, n):
            if not allowed[d]:
                continue
            child = subset + (d,)
            child_blockmax = score[d] if blockmax is None else np.maximum(blockmax, score[d])
            energy = float(child_blockmax.sum())
            if energy > best_energy:
                best_energy = energy
                best_set = child
            # candidate set for the bound: everything compatible with the
            # whole child subset, regardless of index
            child_allowed = allowed & compat[d]
            rows = np.flatnonzero(child_allowed)
            if len(rows):
                child_bound = float(np.maximum(child_blockmax, score[rows].max(axis=0)).sum())
            else:
                child_bound = energy
            if child_bound > best_energy:
                heapq.heappush(
                    heap,
                    (-child_bound, -len(child), child, next(counter), child_allowed, child_blockmax),
                )
    if stats is not None:
        stats.update(expansions=expansions, expanded_subsets=expanded)
    return SceneInterpretation(selected=best_set, energy=best_energy)


def greedy_suppress(detections: Sequence[Detection], eta_box: float) -> list[Detection]:
    """Baseline greedy scheme on predicted boxes: walk detections by
    descending score and drop any whose box intersection with an already
    kept detection exceeds eta_box of its own area."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].raw_score)
    kept: list[int] = []
    for i in order:
        box_i = detections[i].box
        area_i = box_area(box_i)
        suppressed = False
        for j in kept:
            inter = box_area(box_intersection(detections[j].box, box_i))
            ratio = inter / area_i if area_i > 0 else 0.0
            if ratio > eta_box:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return [detections[i] for i in sorted(kept)]
