"""Staged hyperparameter search.

Stage 1 fixes the regularization weight with the plain (no-visibility)
detector and greedy NMS at eta 0.5; stage 2 tunes the greedy eta for that
detector; stage 3 turns visibility modeling on and tunes the contiguity
weight alpha, still under greedy NMS; stage 4 tunes the covering-NMS eta
for the final model. Selection is by validation AP throughout.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .blockgrid import load_image
from .detector import detect, detection_record
from .evaluation import evaluate
from .mixture import MixtureModel, save_model
from .nms import greedy_suppress, scene_grid_for, suppress
from .scenegen import read_manifest
from .training import TrainConfig, train


def _val_ap(model: MixtureModel, manifest_path: Path, eta: float, scheme: str,
            threshold: float = -1.0) -> float:
    records = read_manifest(manifest_path)
    base = manifest_path.parent
    gts = {r["path"]: [(b["x"], b["y"], b["w"], b["h"]) for b in r.get("boxes", [])]
           for r in records}
    if sum(len(v) for v in gts.values()) == 0:
        raise ValueError("validation manifest has no boxes")
    det_records = []
    for rec in records:
        img = load_image(base / rec["path"])
        dets = detect(img, model, threshold, image_name=rec["path"])
        if scheme == "greedy":
            kept = greedy_suppress(dets, eta)
        else:
            scene = scene_grid_for(img.width, img.height, model.max_window_shape,
                                   model.metadata.get("hog", {}).get("cell_px", 8))
            interp = suppress(dets, eta, scene)
            kept = [dets[i] for i in interp.selected]
        det_records.extend(detection_record(d) for d in kept)
    if not det_records:
        return 0.0
    return evaluate(det_records, gts).ap


def run_crossval(train_manifest: Path, val_manifest: Path, out_dir: Path,
                 lambdas: list[float], alphas: list[float], etas: list[float],
                 seed: int, train_overrides: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest(train_manifest)
    base = Path(train_manifest).parent
    overrides = dict(train_overrides or {})
    overrides.pop("reg_lambda", None)
    overrides.pop("alpha", None)
    overrides["seed"] = seed
    field_names = {f.name for f in dataclasses.fields(TrainConfig)}
    overrides = {k: v for k, v in overrides.items() if k in field_names and v is not None}

    trace: list[dict] = []

    def baseline_cfg(lam: float) -> TrainConfig:
        return TrainConfig(reg_lambda=lam, visibility=False, **overrides)

    # stage 1: regularization weight, plain detector, greedy NMS at 0.5
    best_lambda, best_ap = None, -1.0
    for lam in lambdas:
        model = train(records, base, baseline_cfg(lam)).model
        ap = _val_ap(model, Path(val_manifest), 0.5, "greedy")
        trace.append({"stage": "lambda", "reg_lambda": lam, "AP": ap})
        if ap > best_ap:
            best_lambda, best_ap = lam, ap
    baseline_model = train(records, base, baseline_cfg(best_lambda)).model

    # stage 2: greedy-NMS overlap for the baseline
    best_eta_greedy, best_ap = None, -1.0
    for eta in etas:
        ap = _val_ap(baseline_model, Path(val_manifest), eta, "greedy")
        trace.append({"stage": "eta_greedy", "eta": eta, "AP": ap})
        if ap > best_ap:
            best_eta_greedy, best_ap = eta, ap

    # stage 3: contiguity weight with visibility modeling, greedy NMS
    best_alpha, best_ap, best_model = None, -1.0, None
    for alpha in alphas:
        cfg = TrainConfig(reg_lambda=best_lambda, alpha=alpha, visibility=True, **overrides)
        model = train(records, base, cfg).model
        ap = _val_ap(model, Path(val_manifest), best_eta_greedy, "greedy")
        trace.append({"stage": "alpha", "alpha": alpha, "AP": ap})
        if ap > best_ap:
            best_alpha, best_ap, best_model = alpha, ap, model

    # stage 4: covering-NMS overlap for the visibility model
    best_eta_cover, best_ap_cover = None, -1.0
    for eta in etas:
        ap = _val_ap(best_model, Path(val_manifest), eta, "bb")
        trace.append({"stage": "eta_cover", "eta": eta, "AP": ap})
        if ap > best_ap_cover:
            best_eta_cover, best_ap_cover = eta, ap

    save_model(best_model, out_dir / "model.json")
    report = {
        "reg_lambda": best_lambda,
        "eta_greedy": best_eta_greedy,
        "alpha": best_alpha,
        "eta_cover": best_eta_cover,
        "AP_greedy": best_ap,
        "AP_cover": best_ap_cover,
        "model": str(out_dir / "model.json"),
    }
    with open(out_dir / "crossval.json", "w") as fh:
        json.dump({"report": report, "trace": trace}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report
