"""PASCAL-style detection evaluation.

Greedy matching at 50% box IoU with one detection per ground-truth object,
all-point average precision (area under the precision envelope), and
block-mask IoU for judging inferred visibility against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .boxes import box_iou


@dataclass
class EvalReport:
    ap: float
    curve: list[tuple[float, float]]          # (recall, precision) per detection
    matches: list[dict] = field(default_factory=list)
    mask_mean_iou: float | None = None
    n_gt: int = 0

    def to_json(self) -> str:
        doc = {
            "AP": self.ap,
            "n_gt": self.n_gt,
            "pr_curve": [[r, p] for r, p in self.curve],
            "mask_mean_iou": self.mask_mean_iou,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def match_detections(detections: list[dict], ground_truths: dict[str, list], iou_thresh: float = 0.5):
    """Label detections TP/FP by greedy matching.

    detections: records with "image", "box", "score"; processed in
    descending score order (stable). Each detection claims the unmatched
    ground truth of its image with the highest IoU >= threshold.
    Returns (labels bool array in processed order, order indices).
    """
    order = sorted(range(len(detections)), key=lambda i: -float(detections[i]["score"]))
    claimed = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in ground_truths.items()}
    labels = np.zeros(len(order), dtype=bool)
    matched_gt = [None] * len(order)
    for rank, i in enumerate(order):
        det = detections[i]
        boxes = ground_truths.get(det["image"], [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(boxes):
            if claimed[det["image"]][j]:
                continue
            iou = box_iou(det["box"], gt)
            if iou >= iou_thresh and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            claimed[det["image"]][best_j] = True
            labels[rank] = True
            matched_gt[rank] = best_j
    return labels, order, matched_gt


def pr_curve(labels: np.ndarray, n_gt: int) -> list[tuple[float, float]]:
    """(recall, precision) after each detection in ranked order."""
    tp = np.cumsum(labels.astype(np.int64))
    fp = np.cumsum((~labels).astype(np.int64))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    return list(zip(recall.tolist(), precision.tolist()))


def average_precision(labels: np.ndarray, n_gt: int) -> float:
    """All-point AP: area under the precision envelope over recall."""
    if n_gt < 1:
        raise ValueError("n_gt must be >= 1")
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        return 0.0
    tp = np.cumsum(labels.astype(np.float64))
    fp = np.cumsum((~labels).astype(np.float64))
    recall = np.concatenate(([0.0], tp / n_gt, [tp[-1] / n_gt]))
    precision = np.concatenate(([0.0], tp / np.maximum(tp + fp, 1.0), [0.0]))
    # precision envelope: best precision at or beyond each recall level
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def mask_iou(pred: np.ndarray, true: np.ndarray) -> float:
    """Bitwise IoU of two same-shape binary grids; 0 on an empty union."""
    pred = np.asarray(pred, dtype=bool)
    true = np.asarray(true, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError("mask shapes differ")
    union = np.count_nonzero(pred | true)
    if union == 0:
        return 0.0
    return np.count_nonzero(pred & true) / union


def rasterize_detection_mask(record: dict, image_w: int, image_h: int, cell_px: int = 8) -> np.ndarray:
    """Paint a detection's visible blocks on the image cell lattice."""
    from .rle import rle_decode

    grid_w, grid_h = record["grid"]
    flags = rle_decode(record["mask"], (grid_h, grid_w))
    wx, wy, wpw, wph = record["window_box"]
    cells_x = image_w // cell_px
    cells_y = image_h // cell_px
    canvas = np.zeros((cells_y, cells_x), dtype=bool)
    pitch_x = wpw / (grid_w + 1)
    pitch_y = wph / (grid_h + 1)
    for r, c in zip(*np.nonzero(flags)):
        x0 = wx + c * pitch_x
        y0 = wy + r * pitch_y
        cx0 = max(0, int(np.floor(x0 / cell_px + 0.5)))
        cy0 = max(0, int(np.floor(y0 / cell_px + 0.5)))
        cx1 = min(cells_x, int(np.floor((x0 + 2 * pitch_x) / cell_px + 0.5)))
        cy1 = min(cells_y, int(np.floor((y0 + 2 * pitch_y) / cell_px + 0.5)))
        canvas[cy0:cy1, cx0:cx1] = True
    return canvas


def rasterize_ground_truth_mask(obj: dict, image_w: int, image_h: int, cell_px: int = 8) -> np.ndarray:
    """Paint a ground-truth object's visible cells on the image cell lattice."""
    from .rle import rle_decode

    grid_w, grid_h = obj["grid"]
    mask = rle_decode(obj["mask_rle"], (grid_h, grid_w))
    cell_x0, cell_y0 = obj["grid_origin"]
    cells_x = image_w // cell_px
    cells_y = image_h // cell_px
    canvas = np.zeros((cells_y, cells_x), dtype=bool)
    for r, c in zip(*np.nonzero(mask)):
        cy, cx = cell_y0 + r, cell_x0 + c
        if 0 <= cy < cells_y and 0 <= cx < cells_x:
            canvas[cy, cx] = True
    return canvas


def evaluate(
    detections: list[dict],
    ground_truths: dict[str, list],
    iou_thresh: float = 0.5,
    mask_pairs: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> EvalReport:
    """Full report: AP, PR curve and optional mean visibility-mask IoU."""
    n_gt = sum(len(v) for v in ground_truths.values())
    if n_gt == 0:
        raise ValueError("no ground-truth objects to evaluate against")
    labels, order, matched = match_detections(detections, ground_truths, iou_thresh)
    ap = average_precision(labels, n_gt) if len(labels) else 0.0
    curve = pr_curve(labels, n_gt) if len(labels) else []
    matches = [
        {"det_index": int(i), "tp": bool(labels[rank]), "gt_index": matched[rank]}
        for rank, i in enumerate(order)
    ]
    mean_iou = None
    if mask_pairs:
        mean_iou = float(np.mean([mask_iou(p, t) for p, t in mask_pairs]))
    return EvalReport(ap=ap, curve=curve, matches=matches, mask_mean_iou=mean_iou, n_gt=n_gt)
