"""Seeded synthetic scenes with per-block visibility ground truth.

Objects are rectangles carrying a nested-frame texture (strong axis-aligned
edges whose layout is tied to the object extent, so a rigid linear template
can learn them). Occluders carry diagonal stripes: a texture family the
objects never use, which makes occlusion contribute genuinely negative
classifier evidence. Scenes record, per object, the full placed box, the
tight box around the pixels that remain visible, and a cell-lattice
visibility grid quantized over the full box.

Everything is driven by a numpy Generator seeded per scene, so reruns are
bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rle
from .blockgrid import GrayImage, save_image

CELL_PX = 8
RING_WIDTH = 6
STRIPE_PERIOD = 8
MIN_VISIBLE_CELL_FRAC = 0.10


@dataclass(frozen=True)
class SynthSpec:
    image_size: tuple[int, int] = (160, 160)       # (h, w)
    n_objects: tuple[int, int] = (1, 2)            # inclusive range
    size_range: tuple[int, int] = (48, 88)         # object side lengths, px
    occlusion_range: tuple[float, float] = (0.15, 0.65)
    clutter: float = 5.0                           # expected clutter patches
    noise: float = 0.02                            # pixel noise sigma
    pair_prob: float = 0.0                         # chance of a nested object pair
    truncation_prob: float = 0.1                   # chance an object may leave the image
    contrast: float = 0.28

    def __post_init__(self):
        if self.size_range[0] > min(self.image_size):
            raise ValueError("objects larger than the image are infeasible")
        lo, hi = self.occlusion_range
        if not (0.0 <= lo <= hi <= 0.95):
            raise ValueError("occlusion_range must satisfy 0 <= lo <= hi <= 0.95")


@dataclass
class SceneObject:
    full_box: tuple[float, float, float, float]
    visible_box: tuple[float, float, float, float]
    mask: np.ndarray                 # cell-lattice visibility over the full box
    grid_origin: tuple[int, int]     # (cell_x0, cell_y0), may be negative
    occluded_frac: float
    truncated: bool
    dropped: bool


@dataclass
class SynthScene:
    image: GrayImage
    objects: list[SceneObject]
    touching_pair: bool
    seed_key: tuple[int, ...]


def _frame_texture(w: int, h: int, base: float, amp: float) -> np.ndarray:
    xs = np.arange(w)
    ys = np.arange(h)
    dist = np.minimum.outer(np.minimum(ys, h - 1 - ys), np.minimum(xs, w - 1 - xs))
    rings = (dist // RING_WIDTH) % 2
    return np.where(rings == 0, base + amp, base - amp)


def _stripe_texture(w: int, h: int, angle: float, base: float, amp: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    phase = xs * np.cos(angle) + ys * np.sin(angle)
    stripes = (np.floor(phase / (STRIPE_PERIOD / 2.0)) % 2).astype(np.float64)
    return base + amp * (2.0 * stripes - 1.0)


def _paint(canvas, owner, patch, owner_id, x0: int, y0: int):
    h, w = canvas.shape
    ph, pw = patch.shape
    cx0, cy0 = max(0, x0), max(0, y0)
    cx1, cy1 = min(w, x0 + pw), min(h, y0 + ph)
    if cx0 >= cx1 or cy0 >= cy1:
        return
    canvas[cy0:cy1, cx0:cx1] = patch[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
    owner[cy0:cy1, cx0:cx1] = owner_id


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, (max(2, h // 24), max(2, w // 24)))
    ys = np.linspace(0, coarse.shape[0] - 1, h)
    xs = np.linspace(0, coarse.shape[1] - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, coarse.shape[0] - 1)
    x1 = np.minimum(x0 + 1, coarse.shape[1] - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    smooth = (
        coarse[y0][:, x0] * (1 - wy) * (1 - wx)
        + coarse[y0][:, x1] * (1 - wy) * wx
        + coarse[y1][:, x0] * wy * (1 - wx)
        + coarse[y1][:, x1] * wy * wx
    )
    return 0.45 + 0.05 * smooth


def _occluder_strip(rng, box, frac):
    """Strip covering `frac` of the box area from one side, extended
    outward so it reads as a foreign object lying across the target."""
    x, y, w, h = box
    side = int(rng.integers(0, 4))
    ext = int(rng.integers(8, 21))
    if side == 0:  # left
        sw = frac * w
        return (x - ext, y - ext, sw + ext, h + 2 * ext)
    if side == 1:  # right
        sw = frac * w
        return (x + w - sw, y - ext, sw + ext, h + 2 * ext)
    if side == 2:  # top
        sh = frac * h
        return (x - ext, y - ext, w + 2 * ext, sh + ext)
    sh = frac * h
    return (x - ext, y + h - sh, w + 2 * ext, sh + ext)


def _cell_grid_stats(owner, idx, box, image_h, image_w):
    """Visibility per cell over the full box, plus the visible fraction."""
    x, y, w, h = box
    cx0 = int(np.floor(x / CELL_PX))
    cy0 = int(np.floor(y / CELL_PX))
    cx1 = int(np.ceil((x + w) / CELL_PX))
    cy1 = int(np.ceil((y + h) / CELL_PX))
    gw, gh = cx1 - cx0, cy1 - cy0
    mask = np.zeros((gh, gw), dtype=bool)
    for r in range(gh):
        for c in range(gw):
            px0 = (cx0 + c) * CELL_PX
            py0 = (cy0 + r) * CELL_PX
            # pixels of this cell inside the box (image clipping ignored in
            # the denominator so truncation counts as invisibility)
            bx0 = max(px0, int(np.floor(x)))
            by0 = max(py0, int(np.floor(y)))
            bx1 = min(px0 + CELL_PX, int(np.ceil(x + w)))
            by1 = min(py0 + CELL_PX, int(np.ceil(y + h)))
            denom = max(0, bx1 - bx0) * max(0, by1 - by0)
            if denom == 0:
                continue
            ix0, iy0 = max(bx0, 0), max(by0, 0)
            ix1, iy1 = min(bx1, image_w), min(by1, image_h)
            if ix0 >= ix1 or iy0 >= iy1:
                continue
            num = int(np.count_nonzero(owner[iy0:iy1, ix0:ix1] == idx))
            if num / denom >= 0.5:
                mask[r, c] = True
    return mask, (cx0, cy0)


def generate(spec: SynthSpec, seed_key) -> SynthScene:
    """Render one scene. seed_key may be an int or a sequence of ints."""
    if np.isscalar(seed_key):
        seed_key = (int(seed_key),)
    rng = np.random.default_rng(list(seed_key))
    h, w = spec.image_size
    canvas = _background(rng, h, w)
    owner = np.full((h, w), -1, dtype=np.int64)

    # clutter first: background-layer patches, some with the occluder's
    # stripe family so negatives teach the detector to reject it
    n_clutter = int(rng.poisson(spec.clutter))
    for _ in range(n_clutter):
        cw = int(rng.integers(16, 48))
        ch = int(rng.integers(16, 48))
        cx = int(rng.integers(-cw // 2, w - cw // 2))
        cy = int(rng.integers(-ch // 2, h - ch // 2))
        angle = rng.uniform(0, np.pi)
        amp = rng.uniform(0.05, 0.18)
        patch = _stripe_texture(cw, ch, angle, rng.uniform(0.35, 0.6), amp)
        _paint(canvas, owner, patch, -1, cx, cy)

    lo, hi = spec.n_objects
    n_objects = int(rng.integers(lo, hi + 1))
    make_pair = bool(n_objects >= 1 and rng.random() < spec.pair_prob)

    boxes: list[tuple] = []
    z_specs: list[dict] = []

    def try_place(ow, oh, allow_truncation, inside=None, max_tries=60):
        for _ in range(max_tries):
            if inside is not None:
                ix, iy, iw, ih = inside
                if iw <= ow or ih <= oh:
                    return None
                x = int(rng.integers(int(ix) + 1, int(ix + iw - ow)))
                y = int(rng.integers(int(iy) + 1, int(iy + ih - oh)))
            elif allow_truncation:
                x = int(rng.integers(-int(0.4 * ow), w - int(0.6 * ow)))
                y = int(rng.integers(-int(0.4 * oh), h - int(0.6 * oh)))
            else:
                if w - ow <= 1 or h - oh <= 1:
                    return None
                x = int(rng.integers(0, w - ow))
                y = int(rng.integers(0, h - oh))
            candidate = (x, y, ow, oh)
            clash = False
            for other in boxes:
                if inside is not None:
                    continue
                ox0 = max(candidate[0], other[0])
                oy0 = max(candidate[1], other[1])
                ox1 = min(candidate[0] + candidate[2], other[0] + other[2])
                oy1 = min(candidate[1] + candidate[3], other[1] + other[3])
                if ox0 < ox1 and oy0 < oy1:
                    clash = True
                    break
            if not clash:
                return candidate
        return None

    if make_pair:
        bw = int(rng.integers((spec.size_range[0] + spec.size_range[1]) // 2, spec.size_range[1] + 1))
        bh = int(rng.integers((spec.size_range[0] + spec.size_range[1]) // 2, spec.size_range[1] + 1))
        big = try_place(bw, bh, allow_truncation=False)
        if big is not None:
            boxes.append(big)
            z_specs.append({"occlude": False})
            sw = max(12, int(0.42 * bw))
            sh = max(12, int(0.42 * bh))
            small = try_place(sw, sh, allow_truncation=False, inside=big)
            if small is not None:
                boxes.append(small)
                z_specs.append({"occlude": False})
            n_objects = max(0, n_objects - 1)

    for _ in range(n_objects):
        ow = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
        oh = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
        truncate = bool(rng.random() < spec.truncation_prob)
        box = try_place(ow, oh, allow_truncation=truncate)
        if box is None:
            continue
        boxes.append(box)
        z_specs.append({"occlude": True})

    # draw objects in placement order (pairs: big first, small on top)
    for idx, box in enumerate(boxes):
        x, y, ow, oh = box
        base = 0.5 + rng.uniform(-0.05, 0.05)
        patch = _frame_texture(ow, oh, base, spec.contrast)
        _paint(canvas, owner, patch, idx, x, y)

    # strip occluders on top
    for idx, (box, zs) in enumerate(zip(boxes, z_specs)):
        if not zs["occlude"]:
            continue
        frac = rng.uniform(*spec.occlusion_range)
        if frac < 0.02:
            continue
        strip = _occluder_strip(rng, box, frac)
        sx, sy, sw, sh = (int(np.floor(v)) for v in strip)
        if sw <= 0 or sh <= 0:
            continue
        patch = _stripe_texture(sw, sh, np.pi / 4.0, 0.5 + rng.uniform(-0.05, 0.05), spec.contrast)
        _paint(canvas, owner, patch, -2, sx, sy)

    objects: list[SceneObject] = []
    for idx, box in enumerate(boxes):
        mask, origin = _cell_grid_stats(owner, idx, box, h, w)
        total = mask.size
        visible = int(np.count_nonzero(mask))
        occluded_frac = 1.0 - visible / total if total else 1.0
        ys, xs = np.nonzero(owner == idx)
        if len(xs) == 0:
            vis_box = (0.0, 0.0, 0.0, 0.0)
        else:
            vis_box = (
                float(xs.min()),
                float(ys.min()),
                float(xs.max() - xs.min() + 1),
                float(ys.max() - ys.min() + 1),
            )
        truncated = box[0] < 0 or box[1] < 0 or box[0] + box[2] > w or box[1] + box[3] > h
        dropped = visible < MIN_VISIBLE_CELL_FRAC * total or len(xs) == 0
        objects.append(
            SceneObject(
                full_box=tuple(float(v) for v in box),
                visible_box=vis_box,
                mask=mask,
                grid_origin=origin,
                occluded_frac=occluded_frac,
                truncated=truncated,
                dropped=dropped,
            )
        )

    if spec.noise > 0:
        canvas = canvas + rng.normal(0.0, spec.noise, canvas.shape)
    image = GrayImage(np.clip(canvas, 0.0, 1.0))
    return SynthScene(
        image=image,
        objects=objects,
        touching_pair=make_pair and len(boxes) >= 2,
        seed_key=tuple(int(v) for v in seed_key),
    )


def write_dataset(
    spec: SynthSpec,
    n_images: int,
    seed: int,
    out_dir,
    split: str = "train",
    n_negative_images: int = 0,
) -> dict:
    """Render a dataset: PNGs, a JSON-lines manifest and a mask sidecar.

    Negative images reuse the spec with the object count forced to zero, so
    clutter and occluder textures still appear in them.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    neg_spec = replace(spec, n_objects=(0, 0), pair_prob=0.0)
    manifest_path = out_dir / "manifest.jsonl"
    masks_path = out_dir / "masks.jsonl"
    n_pos_objects = 0
    with open(manifest_path, "w") as mf, open(masks_path, "w") as kf:
        for i in range(n_images + n_negative_images):
            use_spec = spec if i < n_images else neg_spec
            scene = generate(use_spec, (seed, i))
            name = f"images/scene_{i:05d}.png"
            save_image(scene.image, out_dir / name)
            kept = [o for o in scene.objects if not o.dropped]
            n_pos_objects += len(kept)
            mf.write(json.dumps({
                "path": name,
                "boxes": [
                    {"x": o.visible_box[0], "y": o.visible_box[1],
                     "w": o.visible_box[2], "h": o.visible_box[3], "class": "object"}
                    for o in kept
                ],
                "split": split,
            }, sort_keys=True) + "\n")
            kf.write(json.dumps({
                "path": name,
                "touching_pair": scene.touching_pair,
                "objects": [
                    {"full_box": list(o.full_box),
                     "box": list(o.visible_box),
                     "mask_rle": rle.rle_encode(o.mask),
                     "grid": [o.mask.shape[1], o.mask.shape[0]],
                     "grid_origin": list(o.grid_origin),
                     "occluded_frac": o.occluded_frac,
                     "truncated": o.truncated}
                    for o in kept
                ],
            }, sort_keys=True) + "\n")
    return {
        "manifest": str(manifest_path),
        "masks": str(masks_path),
        "n_images": n_images + n_negative_images,
        "n_objects": n_pos_objects,
    }


def read_manifest(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
