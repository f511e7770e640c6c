"""Axis-aligned box arithmetic. Boxes are (x, y, w, h) with w, h >= 0."""

from __future__ import annotations


def box_area(box) -> float:
    return max(0.0, float(box[2])) * max(0.0, float(box[3]))


def box_intersection(a, b):
    x0 = max(a[0], b[0])
    y0 = max(a[1], b[1])
    x1 = min(a[0] + a[2], b[0] + b[2])
    y1 = min(a[1] + a[3], b[1] + b[3])
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


def box_iou(a, b) -> float:
    inter = box_area(box_intersection(a, b))
    union = box_area(a) + box_area(b) - inter
    return inter / union if union > 0 else 0.0


def clip_box(box, width: float, height: float):
    x0 = min(max(box[0], 0.0), width)
    y0 = min(max(box[1], 0.0), height)
    x1 = min(max(box[0] + box[2], 0.0), width)
    y1 = min(max(box[1] + box[3], 0.0), height)
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))
