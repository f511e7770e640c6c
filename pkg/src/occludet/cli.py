"""Command-line entry point.

Subcommands cover the whole pipeline: synth (scene generation), train,
detect, nms (covering or greedy), eval, render (box + visibility overlays)
and crossval (staged hyperparameter search). Options may come from a TOML
config file; explicit flags win. Every command writes a run.json with the
resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


def _load_config(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _write_run_json(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w") as fh:
        json.dump({"command": command, "config": resolved}, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _merge(defaults: dict, config: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    resolved = dict(defaults)
    for k in keys:
        if k in config:
            resolved[k] = config[k]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    return resolved


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, help="TOML config file; flags override it")
    p.add_argument("--threads", type=int, default=None, help="worker pool size")


def cmd_synth(args) -> int:
    from .scenegen import SynthSpec, write_dataset

    config = _load_config(args.config) if args.config else {}
    defaults = {
        "images": 100, "negatives": 0, "seed": 0, "split": "train",
        "size": 160, "object_min": 48, "object_max": 88,
        "occlusion_lo": 0.15, "occlusion_hi": 0.65,
        "clutter": 5.0, "noise": 0.02, "pair_prob": 0.0, "truncation_prob": 0.1,
    }
    keys = list(defaults)
    resolved = _merge(defaults, config, args, keys)
    out = Path(args.out)
    spec = SynthSpec(
        image_size=(resolved["size"], resolved["size"]),
        size_range=(resolved["object_min"], resolved["object_max"]),
        occlusion_range=(resolved["occlusion_lo"], resolved["occlusion_hi"]),
        clutter=resolved["clutter"],
        noise=resolved["noise"],
        pair_prob=resolved["pair_prob"],
        truncation_prob=resolved["truncation_prob"],
    )
    info = write_dataset(spec, resolved["images"], resolved["seed"], out,
                         split=resolved["split"], n_negative_images=resolved["negatives"])
    _write_run_json(out, "synth", resolved)
    print(json.dumps(info))
    return 0


_TRAIN_KEYS = [
    "reg_lambda", "alpha", "latent_rounds", "bootstrap_rounds",
    "neg_images_per_round", "fp_stop", "overlap_for_latent", "components",
    "seed", "cell_px", "bins", "stride_px", "scale_factor", "window_blocks",
    "score_threshold", "neg_cap", "max_iter", "visibility",
    "init_negatives_per_image",
]


def _train_config(resolved: dict):
    from .training import TrainConfig

    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in resolved.items() if k in fields})


def cmd_train(args) -> int:
    from .mixture import save_model
    from .scenegen import read_manifest
    from .training import TrainConfig, train

    config = _load_config(args.config) if args.config else {}
    defaults = {f.name: getattr(TrainConfig(), f.name) for f in dataclasses.fields(TrainConfig)}
    resolved = _merge(defaults, config, args, _TRAIN_KEYS)
    if args.no_visibility:
        resolved["visibility"] = False
    manifest = Path(args.manifest)
    records = read_manifest(manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = args.log or (out.parent / (out.stem + "_log.csv"))
    result = train(records, manifest.parent, _train_config(resolved), log_path=log_path)
    save_model(result.model, out)
    _write_run_json(out.parent, "train", resolved)
    print(json.dumps({"model": str(out), "log": str(log_path),
                      "final_energy": result.log_rows[-1]["energy"] if result.log_rows else None}))
    return 0


def cmd_detect(args) -> int:
    from .blockgrid import load_image
    from .detector import DetectConfig, detect, write_detections
    from .mixture import load_model
    from .scenegen import read_manifest

    config = _load_config(args.config) if args.config else {}
    defaults = {"threshold": -1.0, "no_filter": False}
    resolved = _merge(defaults, config, args, ["threshold"])
    resolved["no_filter"] = bool(args.no_filter or config.get("no_filter", False))
    model = load_model(args.model)
    manifest = Path(args.manifest)
    records = read_manifest(manifest)
    cfg = DetectConfig.from_model(model, use_filter=not resolved["no_filter"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    paths = [rec["path"] for rec in records if rec.get("split", "test") != "ignore"]

    def run_one(path):
        img = load_image(manifest.parent / path)
        return detect(img, model, resolved["threshold"], cfg, image_name=path)

    workers = args.threads or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, paths))
    else:
        results = [run_one(p) for p in paths]
    detections = [d for dets in results for d in dets]
    write_detections(out, detections)
    _write_run_json(out.parent, "detect", resolved)
    print(json.dumps({"detections": str(out), "count": len(detections)}))
    return 0


def cmd_nms(args) -> int:
    from .detector import detection_from_record, read_detection_records
    from .mixture import load_model
    from .nms import greedy_suppress, scene_grid_for, suppress
    from .scenegen import read_manifest
    from PIL import Image

    config = _load_config(args.config) if args.config else {}
    defaults = {"scheme": "bb", "eta": 0.5}
    resolved = _merge(defaults, config, args, ["scheme", "eta"])
    model = load_model(args.model)
    manifest = Path(args.manifest)
    records_by_image: dict[str, list] = {}
    all_records = read_detection_records(args.detections)
    for rec in all_records:
        records_by_image.setdefault(rec["image"], []).append(rec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    kept_lines = []
    for rec in read_manifest(manifest):
        path = rec["path"]
        recs = records_by_image.get(path, [])
        dets = [detection_from_record(r) for r in recs]
        if resolved["scheme"] == "greedy":
            kept = greedy_suppress(dets, resolved["eta"])
            kept_keys = {id(d) for d in kept}
            flags = [id(d) in kept_keys for d in dets]
            energy = None
        elif resolved["scheme"] == "bb":
            with Image.open(manifest.parent / path) as im:
                w, h = im.size
            scene = scene_grid_for(w, h, model.max_window_shape,
                                   model.metadata.get("hog", {}).get("cell_px", 8))
            interp = suppress(dets, resolved["eta"], scene)
            flags = [i in set(interp.selected) for i in range(len(dets))]
            energy = interp.energy
        else:
            print(f"unknown nms scheme {resolved['scheme']!r}", file=sys.stderr)
            return 2
        for r, keep in zip(recs, flags):
            r2 = dict(r)
            r2["kept"] = bool(keep)
            if energy is not None:
                r2["F"] = energy
            kept_lines.append(r2)
    with open(out, "w") as fh:
        for r in kept_lines:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    _write_run_json(out.parent, "nms", resolved)
    print(json.dumps({"out": str(out), "kept": sum(1 for r in kept_lines if r["kept"])}))
    return 0


def cmd_eval(args) -> int:
    from .detector import read_detection_records
    from .evaluation import evaluate
    from .scenegen import read_manifest

    config = _load_config(args.config) if args.config else {}
    defaults = {"iou": 0.5}
    resolved = _merge(defaults, config, args, ["iou"])
    records = read_detection_records(args.detections)
    records = [r for r in records if r.get("kept", True)]
    manifest = read_manifest(args.manifest)
    gts = {rec["path"]: [(b["x"], b["y"], b["w"], b["h"]) for b in rec.get("boxes", [])]
           for rec in manifest}
    n_gt = sum(len(v) for v in gts.values())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if n_gt == 0:
        print("manifest has no ground-truth boxes", file=sys.stderr)
        return 2
    if not records:
        report_doc = {"AP": 0.0, "n_gt": n_gt, "pr_curve": [], "mask_mean_iou": None}
        with open(out, "w") as fh:
            json.dump(report_doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        _write_run_json(out.parent, "eval", resolved)
        print(json.dumps({"AP": 0.0}))
        return 0
    report = evaluate(records, gts, resolved["iou"])
    with open(out, "w") as fh:
        fh.write(report.to_json())
    if args.pr_csv:
        with open(args.pr_csv, "w") as fh:
            fh.write("recall,precision\n")
            for r, p in report.curve:
                fh.write(f"{r},{p}\n")
    _write_run_json(out.parent, "eval", resolved)
    print(json.dumps({"AP": report.ap}))
    return 0


def cmd_render(args) -> int:
    from PIL import Image, ImageDraw

    from .detector import read_detection_records
    from .rle import rle_decode

    records = [r for r in read_detection_records(args.detections)
               if r["image"] == args.image and r.get("kept", True)]
    base = Path(args.images_dir) if args.images_dir else Path(args.detections).parent
    img = Image.open(base / args.image).convert("RGB")
    overlay = Image.new("RGBA", img.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(overlay)
    for rec in records:
        x, y, w, h = rec["box"]
        grid_w, grid_h = rec["grid"]
        flags = rle_decode(rec["mask"], (grid_h, grid_w))
        wx, wy, wpw, wph = rec["window_box"]
        pitch_x = wpw / (grid_w + 1)
        pitch_y = wph / (grid_h + 1)
        for r, c in zip(*np.nonzero(flags)):
            bx = wx + c * pitch_x
            by = wy + r * pitch_y
            draw.rectangle([bx, by, bx + 2 * pitch_x, by + 2 * pitch_y],
                           fill=(0, 200, 255, 60))
        draw.rectangle([x, y, x + w, y + h], outline=(0, 80, 255, 255), width=2)
    img = Image.alpha_composite(img.convert("RGBA"), overlay).convert("RGB")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    img.save(out, format="PNG")
    _write_run_json(out.parent, "render", {"image": args.image})
    print(json.dumps({"out": str(out), "rendered": len(records)}))
    return 0


def cmd_crossval(args) -> int:
    """Staged search: reg_lambda with the plain detector and greedy NMS at
    eta 0.5, then the greedy eta, then alpha, then the covering-NMS eta."""
    from .crossval import run_crossval

    config = _load_config(args.config) if args.config else {}
    defaults = {
        "lambdas": "0.1,1,10,100",
        "alphas": "0.01,0.0316,0.1",
        "etas": "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
        "seed": 0,
    }
    resolved = _merge(defaults, config, args, list(defaults))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_over = _merge({}, config, args, _TRAIN_KEYS)
    report = run_crossval(
        Path(args.train_manifest), Path(args.val_manifest), out,
        lambdas=[float(v) for v in str(resolved["lambdas"]).split(",")],
        alphas=[float(v) for v in str(resolved["alphas"]).split(",")],
        etas=[float(v) for v in str(resolved["etas"]).split(",")],
        seed=int(resolved["seed"]),
        train_overrides=train_over,
    )
    _write_run_json(out, "crossval", resolved)
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occludet",
                                     description="occlusion-aware sliding-window detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    for name, typ in [("images", int), ("negatives", int), ("seed", int), ("size", int),
                      ("object-min", int), ("object-max", int), ("occlusion-lo", float),
                      ("occlusion-hi", float), ("clutter", float), ("noise", float),
                      ("pair-prob", float), ("truncation-prob", float)]:
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ, default=None)
    p.add_argument("--split", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--no-visibility", action="store_true",
                   help="baseline mode: every visibility flag stays on")
    for key in _TRAIN_KEYS:
        if key == "visibility":
            continue
        typ = float if key in ("reg_lambda", "alpha", "overlap_for_latent",
                               "scale_factor", "score_threshold") else int
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run detection over a manifest")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-filter", action="store_true",
                   help="skip the upper-bound pre-filter (results identical)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("nms", help="non-maximum suppression")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scheme", choices=["bb", "greedy"], default=None)
    p.add_argument("--eta", type=float, default=None)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", help="precision/recall evaluation")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pr-csv", default=None)
    p.add_argument("--iou", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="overlay detections on an image")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--image", required=True, help="image path as written in the detections file")
    p.add_argument("--images-dir", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("crossval", help="staged hyperparameter search")
    _add_common(p)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", default=None)
    p.add_argument("--alphas", default=None)
    p.add_argument("--etas", default=None)
    p.add_argument("--seed", type=int, default=None)
    for key in _TRAIN_KEYS:
        if key in ("reg_lambda", "alpha", "seed", "visibility"):
            continue
        typ = float if key in ("overlap_for_latent", "scale_factor",
                               "score_threshold") else int
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)
    p.set_defaults(func=cmd_crossval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
