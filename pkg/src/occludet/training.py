"""Latent-variable max-margin training.

The model variables (per-component block weights, unary occlusion bias and
classifier bias) minimize an L2-regularized hinge energy over training
windows whose latent values (mixture assignment and visibility pattern) are
held fixed; training alternates that convex minimization with latent
re-inference on the positives and with bootstrapping rounds that mine
high-scoring false positives from object-free images. Negative latents are
re-inferred once per bootstrap round and then frozen, which keeps every
minimization a fixed convex problem and the per-call energy trace
monotone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .blockgrid import (
    DEFAULT_BINS,
    DEFAULT_CELL_PX,
    DEFAULT_SCALE_FACTOR,
    DEFAULT_STRIDE_PX,
    GrayImage,
    PyramidLevel,
    WindowFeatures,
    block_stride,
    build_pyramid,
    load_image,
)
from .boxes import box_iou
from .detector import DetectConfig, scan_level, window_pixel_box
from .mixture import MixtureComponent, MixtureModel
from .visibility import (
    IsingConfig,
    VisibilityMask,
    all_visible_mask,
    response_batch,
)


@dataclass
class TrainConfig:
    reg_lambda: float = 1.0
    alpha: float = 0.05
    latent_rounds: int = 6
    bootstrap_rounds: int = 20
    neg_images_per_round: int = 200
    fp_stop: int = 200
    overlap_for_latent: float = 0.7
    components: int = 2
    seed: int = 0
    # pipeline plumbing
    cell_px: int = DEFAULT_CELL_PX
    bins: int = DEFAULT_BINS
    stride_px: int = DEFAULT_STRIDE_PX
    scale_factor: float = DEFAULT_SCALE_FACTOR
    window_blocks: int = 36           # target window area, in blocks
    score_threshold: float = -1.0     # mining / detection threshold t
    neg_cap: int = 5000               # kept negatives per component
    max_iter: int = 500
    grad_tol: float = 1e-5
    visibility: bool = True           # False: plain baseline, all flags on
    init_negatives_per_image: int = 4

    def __post_init__(self):
        if self.reg_lambda <= 0:
            raise ValueError("reg_lambda must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0.0 < self.overlap_for_latent <= 1.0):
            raise ValueError("overlap_for_latent must be in (0, 1]")
        for name in ("latent_rounds", "bootstrap_rounds", "neg_images_per_round",
                     "fp_stop", "components"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class TrainingExample:
    label: int                       # +1 positive, -1 negative
    component: int                   # latent mixture assignment
    features: WindowFeatures         # window for the assigned component
    mask: VisibilityMask             # latent visibility flags
    gt_box: Optional[tuple] = None
    image_path: Optional[str] = None
    window_box: Optional[tuple] = None
    alt_features: Optional[dict[int, WindowFeatures]] = None
    mine_score: float = 0.0
    key: tuple = ()


def hinge(y: int, s: float) -> float:
    return max(0.0, 1.0 - y * s)


# ---------------------------------------------------------------------------
# packed model variables and the regularized hinge energy


@dataclass
class VariableLayout:
    """Flat layout of all model variables: per component the block weights,
    then the unary bias, then the classifier bias."""

    shapes: list[tuple[int, int]]
    q: int
    offsets: list[int] = field(default_factory=list)
    total: int = 0

    def __post_init__(self):
        pos = 0
        self.offsets = []
        for wh, ww in self.shapes:
            self.offsets.append(pos)
            pos += wh * ww * self.q + 2
        self.total = pos

    def weights_of(self, o: np.ndarray, j: int) -> np.ndarray:
        wh, ww = self.shapes[j]
        a = self.offsets[j]
        return o[a:a + wh * ww * self.q]

    def unary_of(self, o: np.ndarray, j: int) -> float:
        wh, ww = self.shapes[j]
        return float(o[self.offsets[j] + wh * ww * self.q])

    def bias_of(self, o: np.ndarray, j: int) -> float:
        wh, ww = self.shapes[j]
        return float(o[self.offsets[j] + wh * ww * self.q + 1])


@dataclass
class DesignMatrices:
    """Per component: visible-masked feature rows, invisible-block counts
    and labels, for all examples assigned to it."""

    rows: list[np.ndarray]       # (n_j, r_j * q) float64
    inv_counts: list[np.ndarray]  # (n_j,) float64
    labels: list[np.ndarray]     # (n_j,) float64


def build_design(examples: Sequence[TrainingExample], layout: VariableLayout) -> DesignMatrices:
    rows, counts, labels = [], [], []
    for j, (wh, ww) in enumerate(layout.shapes):
        members = [e for e in examples if e.component == j]
        n = len(members)
        X = np.zeros((n, wh * ww * layout.q))
        k = np.zeros(n)
        y = np.zeros(n)
        for i, e in enumerate(members):
            flags = e.mask.flags
            X[i] = (e.features.blocks * flags[:, :, None]).reshape(-1)
            k[i] = flags.size - np.count_nonzero(flags)
            y[i] = e.label
        rows.append(X)
        counts.append(k)
        labels.append(y)
    return DesignMatrices(rows=rows, inv_counts=counts, labels=labels)


def energy_and_gradient(
    o: np.ndarray, design: DesignMatrices, layout: VariableLayout, reg_lambda: float
) -> tuple[float, np.ndarray]:
    """Regularized hinge energy and its subgradient (0-side at kinks)."""
    total = 0.0
    grad = np.zeros_like(o)
    for j, (wh, ww) in enumerate(layout.shapes):
        a = layout.offsets[j]
        nw = wh * ww * layout.q
        w = o[a:a + nw]
        u = o[a + nw]
        b = o[a + nw + 1]
        c_j = wh * ww
        total += 0.5 * reg_lambda * (float(w @ w) + c_j * u * u)
        grad[a:a + nw] += reg_lambda * w
        grad[a + nw] += reg_lambda * c_j * u
        X, k, y = design.rows[j], design.inv_counts[j], design.labels[j]
        if len(y) == 0:
            continue
        s = X @ w + k * u + b
        margin = 1.0 - y * s
        active = margin > 0.0
        total += float(margin[active].sum())
        coef = np.where(active, -y, 0.0)
        grad[a:a + nw] += X.T @ coef
        grad[a + nw] += float(coef @ k)
        grad[a + nw + 1] += float(coef.sum())
    return total, grad


def energy(o: np.ndarray, examples: Sequence[TrainingExample], layout: VariableLayout,
           cfg: TrainConfig) -> float:
    design = build_design(examples, layout)
    return energy_and_gradient(o, design, layout, cfg.reg_lambda)[0]


def energy_gradient(o: np.ndarray, examples: Sequence[TrainingExample], layout: VariableLayout,
                    cfg: TrainConfig) -> np.ndarray:
    design = build_design(examples, layout)
    return energy_and_gradient(o, design, layout, cfg.reg_lambda)[1]


# ---------------------------------------------------------------------------
# limited-memory quasi-Newton descent with Armijo backtracking


def _lbfgs_direction(g, s_hist, y_hist, rho_hist):
    if not s_hist:
        return -g
    q = g.copy()
    alphas = []
    for sv, yv, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(sv @ q)
        alphas.append(a)
        q -= a * yv
    q *= float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
    for (sv, yv, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        beta = rho * float(yv @ q)
        q += (a - beta) * sv
    return -q


def minimize(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    max_iter: int = 500,
    grad_tol: float = 1e-5,
    memory: int = 10,
) -> tuple[np.ndarray, float, list[float]]:
    """Monotone descent: accepts only Armijo-decreasing steps, stops when
    the gradient infinity norm drops below grad_tol or iterations run out.
    Returns (x, energy, per-iterate energy history)."""
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ValueError(f"non-finite energy at the initial point: {f!r}")
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    for _ in range(max_iter):
        if np.max(np.abs(g)) < grad_tol:
            break
        d = _lbfgs_direction(g, s_hist, y_hist, rho_hist)
        gd = float(g @ d)
        if not np.isfinite(gd) or gd >= 0.0:
            d = -g
            gd = -float(g @ g)
        step = 1.0
        if not s_hist:
            step = 1.0 / max(1.0, float(np.max(np.abs(d))))
        accepted = False
        while step > 1e-20:
            xn = x + step * d
            fn, gn = fun_grad(xn)
            if not np.isfinite(fn):
                raise ValueError(
                    f"non-finite energy during line search (step {step:g}, "
                    f"|x| {float(np.max(np.abs(xn))):g})"
                )
            if fn <= f + 1e-4 * step * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        sv = xn - x
        yv = gn - g
        sy = float(sv @ yv)
        if sy > 1e-12 * float(np.linalg.norm(sv)) * float(np.linalg.norm(yv)):
            s_hist.append(sv)
            y_hist.append(yv)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = xn, fn, gn
        history.append(f)
    return x, f, history


# ---------------------------------------------------------------------------
# initialization


def kmeans_init(ratios: np.ndarray, d: int, seed: int, restarts: int = 8,
                max_lloyd: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """1-D k-means on aspect ratios: k-means++ seeding, Lloyd iterations,
    best of a few deterministic restarts. Returns (assignments, centers)
    with centers in ascending order."""
    ratios = np.asarray(ratios, dtype=np.float64)
    n = len(ratios)
    if n < d:
        raise ValueError(f"need at least {d} positives for {d} components, got {n}")
    rng = np.random.default_rng(seed)
    best_sse = np.inf
    best_centers = None
    for _ in range(restarts):
        centers = np.empty(d)
        centers[0] = ratios[rng.integers(n)]
        for c in range(1, d):
            dist2 = np.min((ratios[:, None] - centers[None, :c]) ** 2, axis=1)
            if dist2.sum() <= 0:
                centers[c] = ratios[rng.integers(n)]
                continue
            probs = dist2 / dist2.sum()
            centers[c] = ratios[rng.choice(n, p=probs)]
        assign = None
        for _ in range(max_lloyd):
            new_assign = np.argmin(np.abs(ratios[:, None] - centers[None, :]), axis=1)
            for c in range(d):
                sel = new_assign == c
                if np.any(sel):
                    centers[c] = ratios[sel].mean()
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
        sse = float(np.sum((ratios - centers[assign]) ** 2))
        if sse < best_sse - 1e-15:
            best_sse = sse
            best_centers = centers.copy()
    order = np.argsort(best_centers, kind="stable")
    centers = best_centers[order]
    assignments = np.argmin(np.abs(ratios[:, None] - centers[None, :]), axis=1)
    return assignments, centers


def shape_for_ratio(ratio: float, target_blocks: int, min_side: int = 3,
                    max_side: int = 12) -> tuple[int, int]:
    """Window shape (h, w) in blocks whose area approximates the target and
    whose aspect matches the cluster-mean box ratio."""
    ratio = float(np.clip(ratio, 0.25, 4.0))
    ww = int(np.clip(round(np.sqrt(target_blocks * ratio)), min_side, max_side))
    wh = int(np.clip(round(np.sqrt(target_blocks / ratio)), min_side, max_side))
    return wh, ww


def average_bbox(rel_boxes: Sequence[tuple], window_block_h: int, window_block_w: int,
                 subdiv: int = 1) -> tuple[float, float, float, float]:
    """Box in the normalized window frame maximizing mean IoU with the
    given boxes, grid-searched at block resolution (subdiv > 1 refines)."""
    if not rel_boxes:
        raise ValueError("need at least one assigned box")
    nx = (window_block_w + 1) * subdiv
    ny = (window_block_h + 1) * subdiv
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    boxes = np.asarray(rel_boxes, dtype=np.float64)
    best = (-1.0, (0.0, 0.0, 1.0, 1.0))
    for iy0 in range(ny):
        for iy1 in range(iy0 + 1, ny + 1):
            for ix0 in range(nx):
                for ix1 in range(ix0 + 1, nx + 1):
                    cand = (xs[ix0], ys[iy0], xs[ix1] - xs[ix0], ys[iy1] - ys[iy0])
                    ious = _iou_many(cand, boxes)
                    score = float(ious.mean())
                    if score > best[0]:
                        best = (score, cand)
    return best[1]


def _iou_many(box, boxes: np.ndarray) -> np.ndarray:
    x0 = np.maximum(box[0], boxes[:, 0])
    y0 = np.maximum(box[1], boxes[:, 1])
    x1 = np.minimum(box[0] + box[2], boxes[:, 0] + boxes[:, 2])
    y1 = np.minimum(box[1] + box[3], boxes[:, 1] + boxes[:, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    union = box[2] * box[3] + boxes[:, 2] * boxes[:, 3] - inter
    return np.where(union > 0, inter / union, 0.0)


# ---------------------------------------------------------------------------
# feature extraction helpers


def _copy_window(level: PyramidLevel, row: int, col: int, wh: int, ww: int,
                 level_index: int) -> WindowFeatures:
    return WindowFeatures(
        blocks=np.array(level.features[row:row + wh, col:col + ww]),
        inferable=np.array(level.inferable[row:row + wh, col:col + ww]),
        origin=(level_index, row, col),
    )


def _initial_anchor(levels: list[PyramidLevel], gt_box, wh: int, ww: int, cell_px: int):
    """Best (level, row, col) whose window box tracks the ground truth."""
    gx, gy, gw, gh = gt_box
    best = None
    for li, level in enumerate(levels):
        if level.grid_h < wh or level.grid_w < ww:
            continue
        s = level.scale
        # center-aligned anchor, then clamped onto the padded lattice
        col = round((gx + gw / 2) / (cell_px * s) - (ww + 1) / 2 + level.pad_x)
        row = round((gy + gh / 2) / (cell_px * s) - (wh + 1) / 2 + level.pad_y)
        col = int(np.clip(col, 0, level.grid_w - ww))
        row = int(np.clip(row, 0, level.grid_h - wh))
        wbox = window_pixel_box(row, col, wh, ww, level, cell_px)
        iou = box_iou(wbox, gt_box)
        if best is None or iou > best[0]:
            best = (iou, li, row, col)
    if best is None:
        raise ValueError("no pyramid level fits the component window")
    return best[1], best[2], best[3]


def _anchor_window_boxes(level: PyramidLevel, rows, cols, wh, ww, cell_px):
    s = level.scale
    x0 = (cols - level.pad_x) * cell_px * s
    y0 = (rows - level.pad_y) * cell_px * s
    return x0, y0, (ww + 1) * cell_px * s, (wh + 1) * cell_px * s


def _gather_windows(level: PyramidLevel, comp: MixtureComponent, rows, cols):
    """Per-block terms and clamp masks for paired (row, col) anchors."""
    from numpy.lib.stride_tricks import sliding_window_view

    wh, ww = comp.window_block_h, comp.window_block_w
    view = sliding_window_view(level.features, (wh, ww), axis=(0, 1))
    sel = view[rows, cols]  # (k, q, wh, ww)
    terms = np.einsum("kqhw,hwq->khw", sel, comp.weights.astype(np.float64), optimize=True)
    fixed = sliding_window_view(~level.inferable, (wh, ww), axis=(0, 1))
    fixed = np.ascontiguousarray(fixed[rows, cols])
    return terms, fixed


# ---------------------------------------------------------------------------
# latent updates and bootstrapping


def latent_update(
    model: MixtureModel,
    positives: Sequence[TrainingExample],
    images: dict[str, GrayImage],
    cfg: TrainConfig,
) -> int:
    """Re-infer (assignment, visibility) for each positive from the highest
    scoring window overlapping its ground-truth box by at least the
    configured IoU; positives without any qualifying window keep their
    previous latent values. Returns the number of updated positives."""
    ising = model.ising
    step = block_stride(cfg.stride_px, cfg.cell_px)
    by_image: dict[str, list[TrainingExample]] = {}
    for p in positives:
        by_image.setdefault(p.image_path, []).append(p)
    updated = 0
    max_h, max_w = model.max_window_shape
    for path in by_image:
        img = images[path]
        levels = build_pyramid(img, max_w, max_h, cfg.cell_px, cfg.bins, cfg.scale_factor)
        for p in by_image[path]:
            best = None  # (score, comp_id, level_idx, row, col)
            for comp in model.components:
                wh, ww = comp.window_block_h, comp.window_block_w
                for li, level in enumerate(levels):
                    if level.grid_h < wh or level.grid_w < ww:
                        continue
                    rows = np.arange(0, level.grid_h - wh + 1, step)
                    cols = np.arange(0, level.grid_w - ww + 1, step)
                    x0, y0, wpw, wph = _anchor_window_boxes(level, rows, cols, wh, ww, cfg.cell_px)
                    gx, gy, gw, gh = p.gt_box
                    ix = np.clip(np.minimum(x0 + wpw, gx + gw) - np.maximum(x0, gx), 0, None)
                    iy = np.clip(np.minimum(y0 + wph, gy + gh) - np.maximum(y0, gy), 0, None)
                    inter = iy[:, None] * ix[None, :]
                    union = wpw * wph + gw * gh - inter
                    qual = np.argwhere(inter / union >= cfg.overlap_for_latent)
                    if len(qual) == 0:
                        continue
                    terms, fixed = _gather_windows(
                        level, comp, qual[:, 0] * step, qual[:, 1] * step
                    )
                    if cfg.visibility:
                        scores, labels = response_batch(terms, fixed, comp, ising)
                    else:
                        scores = comp.bias + terms.sum(axis=(1, 2))
                        labels = np.ones_like(fixed, dtype=np.uint8)
                    order = np.argmax(scores)
                    cand = (
                        float(scores[order]),
                        comp.component_id,
                        li,
                        int(qual[order, 0] * step),
                        int(qual[order, 1] * step),
                        labels[order],
                        fixed[order] if cfg.visibility else np.zeros_like(fixed[order]),
                    )
                    if best is None or cand[0] > best[0]:
                        best = cand
            if best is None:
                continue
            score, m, li, row, col, labels, fixed = best
            comp = model.components[m]
            level = levels[li]
            p.component = m
            p.features = _copy_window(level, row, col, comp.window_block_h, comp.window_block_w, li)
            if cfg.visibility:
                p.mask = VisibilityMask(flags=labels.astype(bool), fixed=fixed.astype(bool))
            else:
                p.mask = VisibilityMask(
                    flags=np.ones_like(labels, dtype=bool), fixed=np.zeros_like(labels, dtype=bool)
                )
            p.window_box = window_pixel_box(
                row, col, comp.window_block_h, comp.window_block_w, level, cfg.cell_px
            )
            updated += 1
    return updated


def bootstrap_mine(
    model: MixtureModel,
    image_paths: Sequence[str],
    images: dict[str, GrayImage],
    threshold: float,
    cap: int,
    cfg: TrainConfig,
) -> tuple[list[TrainingExample], dict[int, int]]:
    """Mine windows scoring above the threshold from object-free images.

    Returns hard negatives sorted by descending score (truncated to cap)
    and the per-component count of all false positives found."""
    detect_cfg = DetectConfig(
        cell_px=cfg.cell_px, bins=cfg.bins, stride_px=cfg.stride_px,
        scale_factor=cfg.scale_factor, use_filter=True,
    )
    max_h, max_w = model.max_window_shape
    counts = {c.component_id: 0 for c in model.components}
    light: list[tuple] = []  # (-score, path, level, row, col, component)
    for path in image_paths:
        levels = build_pyramid(images[path], max_w, max_h, cfg.cell_px, cfg.bins,
                               cfg.scale_factor)
        for li, level in enumerate(levels):
            for rec in scan_level(level, model, detect_cfg, threshold):
                counts[rec.component] += 1
                light.append((-rec.score, path, li, rec.row, rec.col, rec.component))
    light.sort()
    light = light[:cap]
    by_image: dict[str, list[tuple]] = {}
    for item in light:
        by_image.setdefault(item[1], []).append(item)
    negatives = []
    for path in by_image:
        levels = build_pyramid(images[path], max_w, max_h, cfg.cell_px, cfg.bins,
                               cfg.scale_factor)
        for neg_score, _, li, row, col, m in by_image[path]:
            level = levels[li]
            alt = {}
            for comp in model.components:
                wh, ww = comp.window_block_h, comp.window_block_w
                if row + wh <= level.grid_h and col + ww <= level.grid_w:
                    alt[comp.component_id] = _copy_window(level, row, col, wh, ww, li)
            comp = model.components[m]
            feats = alt[m]
            fixed = ~feats.inferable
            negatives.append(
                TrainingExample(
                    label=-1,
                    component=m,
                    features=feats,
                    mask=all_visible_mask(feats.inferable) if cfg.visibility
                    else VisibilityMask(np.ones(feats.shape, dtype=bool),
                                        np.zeros(feats.shape, dtype=bool)),
                    image_path=path,
                    alt_features=alt,
                    mine_score=-neg_score,
                    key=(path, li, row, col),
                )
            )
    negatives.sort(key=lambda e: (-e.mine_score, e.key))
    return negatives, counts


def reinfer_negative_latents(model: MixtureModel, negatives: Sequence[TrainingExample],
                             cfg: TrainConfig) -> None:
    """Refresh each negative's (assignment, visibility) under the current
    model; frozen afterwards for the round's minimization."""
    if not negatives:
        return
    ising = model.ising
    best_score = np.full(len(negatives), -np.inf)
    best_comp = np.full(len(negatives), -1)
    mask_of: list[Optional[VisibilityMask]] = [None] * len(negatives)
    for comp in model.components:
        cid = comp.component_id
        members = [i for i, e in enumerate(negatives) if cid in (e.alt_features or {})]
        if not members:
            continue
        blocks = np.stack([negatives[i].alt_features[cid].blocks for i in members])
        fixed = np.stack([~negatives[i].alt_features[cid].inferable for i in members])
        terms = np.einsum("nhwq,hwq->nhw", blocks, comp.weights.astype(np.float64),
                          optimize=True)
        if cfg.visibility:
            scores, labels = response_batch(terms, fixed, comp, ising)
        else:
            scores = comp.bias + terms.sum(axis=(1, 2))
            labels = np.ones(terms.shape, dtype=np.uint8)
        for row, i in enumerate(members):
            if scores[row] > best_score[i]:  # strict: lowest id wins ties
                best_score[i] = scores[row]
                best_comp[i] = cid
                if cfg.visibility:
                    mask_of[i] = VisibilityMask(flags=labels[row].astype(bool),
                                                fixed=fixed[row])
                else:
                    mask_of[i] = VisibilityMask(np.ones(terms.shape[1:], dtype=bool),
                                                np.zeros(terms.shape[1:], dtype=bool))
    for i, e in enumerate(negatives):
        if best_comp[i] >= 0:
            e.component = int(best_comp[i])
            e.features = e.alt_features[e.component]
            e.mask = mask_of[i]


# ---------------------------------------------------------------------------
# the training driver


@dataclass
class TrainResult:
    model: MixtureModel
    log_rows: list[dict]
    energy_traces: list[list[float]]


def _model_from_vars(o: np.ndarray, layout: VariableLayout, cfg: TrainConfig,
                     avg_boxes: list[tuple], metadata: dict) -> MixtureModel:
    comps = []
    for j, (wh, ww) in enumerate(layout.shapes):
        comps.append(
            MixtureComponent(
                weights=layout.weights_of(o, j).reshape(wh, ww, layout.q).astype(np.float32),
                bias=layout.bias_of(o, j),
                unary_bias=layout.unary_of(o, j),
                component_id=j,
                avg_box=avg_boxes[j],
            )
        )
    return MixtureModel(components=comps, ising=IsingConfig(alpha=cfg.alpha), metadata=metadata)


def train(manifest_records: Sequence[dict], base_dir, cfg: TrainConfig,
          log_path=None) -> TrainResult:
    """Full training driver over a dataset manifest.

    Records with boxes supply positives; records without any box are the
    negative image pool for bootstrapping. Deterministic for a fixed seed.
    """
    base_dir = Path(base_dir)
    rng = np.random.default_rng(cfg.seed)

    pos_entries = []
    neg_paths = []
    for rec in manifest_records:
        boxes = rec.get("boxes", [])
        if boxes:
            for b in boxes:
                pos_entries.append((rec["path"], (b["x"], b["y"], b["w"], b["h"])))
        else:
            neg_paths.append(rec["path"])
    if not pos_entries:
        raise ValueError("no positive boxes in the manifest")
    if not neg_paths:
        raise ValueError("no negative images in the manifest")

    images: dict[str, GrayImage] = {}

    def image_of(path: str) -> GrayImage:
        if path not in images:
            images[path] = load_image(base_dir / path)
        return images[path]

    # mixture initialization on box aspect ratios, all flags on
    ratios = np.array([b[2] / b[3] for _, b in pos_entries])
    assignments, centers = kmeans_init(ratios, cfg.components, cfg.seed)
    shapes = [shape_for_ratio(centers[j], cfg.window_blocks) for j in range(cfg.components)]
    q = 4 * cfg.bins
    layout = VariableLayout(shapes=shapes, q=q)
    max_h = max(h for h, _ in shapes)
    max_w = max(w for _, w in shapes)

    positives: list[TrainingExample] = []
    for (path, box), j in zip(pos_entries, assignments):
        wh, ww = shapes[j]
        levels = build_pyramid(image_of(path), max_w, max_h, cfg.cell_px, cfg.bins,
                               cfg.scale_factor)
        li, row, col = _initial_anchor(levels, box, wh, ww, cfg.cell_px)
        feats = _copy_window(levels[li], row, col, wh, ww, li)
        mask = (all_visible_mask(feats.inferable) if cfg.visibility
                else VisibilityMask(np.ones(feats.shape, dtype=bool),
                                    np.zeros(feats.shape, dtype=bool)))
        positives.append(
            TrainingExample(
                label=1, component=int(j), features=feats, mask=mask,
                gt_box=box, image_path=path,
                window_box=window_pixel_box(row, col, wh, ww, levels[li], cfg.cell_px),
            )
        )

    # seed negatives: random windows from the negative pool
    negatives: dict[tuple, TrainingExample] = {}
    for path in neg_paths:
        levels = build_pyramid(image_of(path), max_w, max_h, cfg.cell_px, cfg.bins,
                               cfg.scale_factor)
        for _ in range(cfg.init_negatives_per_image):
            li = int(rng.integers(len(levels)))
            level = levels[li]
            row = int(rng.integers(0, level.grid_h - max_h + 1))
            col = int(rng.integers(0, level.grid_w - max_w + 1))
            alt = {}
            for j, (wh, ww) in enumerate(shapes):
                alt[j] = _copy_window(level, row, col, wh, ww, li)
            j0 = 0
            feats = alt[j0]
            ex = TrainingExample(
                label=-1, component=j0, features=feats,
                mask=all_visible_mask(feats.inferable) if cfg.visibility
                else VisibilityMask(np.ones(feats.shape, dtype=bool),
                                    np.zeros(feats.shape, dtype=bool)),
                image_path=path, alt_features=alt, key=(path, li, row, col),
            )
            negatives[ex.key] = ex

    o = np.zeros(layout.total)
    metadata = {
        "class": "object",
        "visibility": cfg.visibility,
        "hog": {"cell_px": cfg.cell_px, "bins": cfg.bins,
                "stride_px": cfg.stride_px, "scale_factor": cfg.scale_factor},
        "train": {"reg_lambda": cfg.reg_lambda, "alpha": cfg.alpha,
                  "components": cfg.components, "seed": cfg.seed},
    }
    avg_boxes = [(0.0, 0.0, 1.0, 1.0)] * cfg.components
    log_rows: list[dict] = []
    traces: list[list[float]] = []

    for latent_round in range(cfg.latent_rounds):
        for boot_round in range(cfg.bootstrap_rounds):
            model = _model_from_vars(o, layout, cfg, avg_boxes, metadata)
            reinfer_negative_latents(model, list(negatives.values()), cfg)
            examples = positives + list(negatives.values())
            design = build_design(examples, layout)
            o, e_final, history = minimize(
                lambda v: energy_and_gradient(v, design, layout, cfg.reg_lambda),
                o, max_iter=cfg.max_iter, grad_tol=cfg.grad_tol,
            )
            traces.append(history)

            model = _model_from_vars(o, layout, cfg, avg_boxes, metadata)
            pool = neg_paths
            if len(pool) > cfg.neg_images_per_round:
                sel = rng.choice(len(pool), size=cfg.neg_images_per_round, replace=False)
                pool = [neg_paths[i] for i in sorted(sel)]
            for p in pool:
                image_of(p)
            mined, counts = bootstrap_mine(
                model, pool, images, cfg.score_threshold, cfg.neg_cap, cfg
            )
            for ex in mined:
                old = negatives.get(ex.key)
                if old is None or ex.mine_score > old.mine_score:
                    negatives[ex.key] = ex
            # cap per component, dropping lowest mined score first
            by_comp: dict[int, list[TrainingExample]] = {}
            for ex in negatives.values():
                by_comp.setdefault(ex.component, []).append(ex)
            kept: dict[tuple, TrainingExample] = {}
            for comp_id, members in by_comp.items():
                members.sort(key=lambda e: (-e.mine_score, e.key))
                for ex in members[:cfg.neg_cap]:
                    kept[ex.key] = ex
            negatives = kept
            log_rows.append({
                "latent_round": latent_round,
                "bootstrap_round": boot_round,
                "energy": e_final,
                "n_negatives": len(negatives),
                **{f"fp_component_{k}": v for k, v in counts.items()},
            })
            if all(v < cfg.fp_stop for v in counts.values()):
                break
        model = _model_from_vars(o, layout, cfg, avg_boxes, metadata)
        for path, _ in pos_entries:
            image_of(path)
        latent_update(model, positives, images, cfg)

    # average box prior per component, from the positives' final windows
    for j in range(cfg.components):
        rel = []
        for p in positives:
            if p.component != j or p.window_box is None:
                continue
            wx, wy, wpw, wph = p.window_box
            gx, gy, gw, gh = p.gt_box
            rel.append(((gx - wx) / wpw, (gy - wy) / wph, gw / wpw, gh / wph))
        if rel:
            avg_boxes[j] = average_bbox(rel, shapes[j][0], shapes[j][1])

    model = _model_from_vars(o, layout, cfg, avg_boxes, metadata)
    if log_path is not None:
        fields = sorted({k for row in log_rows for k in row})
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(log_rows)
    return TrainResult(model=model, log_rows=log_rows, energy_traces=traces)
