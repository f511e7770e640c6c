"""Mixture-of-linear-classifiers detector and its on-disk format.

The detector score of a window is the maximum response over all mixture
components; ties go to the lowest component id. Models serialize to a JSON
envelope (format "occludet-model/1") with base64 little-endian f32 weight
payloads.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .blockgrid import WindowFeatures
from .visibility import (
    IsingConfig,
    MixtureComponent,
    ResponseResult,
    filtered_response,
    upper_bound,
    window_response,
)

MODEL_FORMAT = "occludet-model/1"
_FORMAT_PREFIX = "occludet-model/"


@dataclass
class MixtureModel:
    components: list[MixtureComponent]
    ising: IsingConfig = field(default_factory=IsingConfig)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.components:
            raise ValueError("model needs at least one component")
        ids = [c.component_id for c in self.components]
        if ids != list(range(len(self.components))):
            raise ValueError("component ids must be 0..d-1 in order")

    @property
    def max_window_shape(self) -> tuple[int, int]:
        return (
            max(c.window_block_h for c in self.components),
            max(c.window_block_w for c in self.components),
        )

    @property
    def visibility_enabled(self) -> bool:
        return bool(self.metadata.get("visibility", True))


@dataclass
class ScoredWindow:
    score: float
    assignment: int
    response: ResponseResult
    origin: tuple[int, int, int]


def mixture_score(
    windows: Sequence[Optional[WindowFeatures]],
    model: MixtureModel,
    threshold: float,
) -> Optional[ScoredWindow]:
    """Score one anchor with every component, keeping the best response.

    windows holds one WindowFeatures per component (matching that
    component's shape, anchored at the same origin); None marks components
    whose window does not fit. Returns None when no component's upper bound
    clears the threshold.
    """
    best: Optional[ScoredWindow] = None
    for comp, x in zip(model.components, windows):
        if x is None:
            continue
        if upper_bound(x, comp) <= threshold:
            continue
        result = window_response(x, comp, model.ising)
        if best is None or result.score > best.score:
            best = ScoredWindow(
                score=result.score,
                assignment=comp.component_id,
                response=result,
                origin=x.origin,
            )
    return best


def _component_record(c: MixtureComponent) -> dict:
    payload = np.ascontiguousarray(c.weights, dtype="<f4").tobytes()
    return {
        "id": c.component_id,
        "window_block_w": c.window_block_w,
        "window_block_h": c.window_block_h,
        "block_dim": int(c.weights.shape[2]),
        "bias": float(c.bias),
        "unary_bias": float(c.unary_bias),
        "avg_box": [float(v) for v in c.avg_box],
        "weights": base64.b64encode(payload).decode("ascii"),
    }


def model_to_json(model: MixtureModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "ising_alpha": float(model.ising.alpha),
        "metadata": model.metadata,
        "components": [_component_record(c) for c in model.components],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: MixtureModel, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> MixtureModel:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("corrupt model file: not a JSON object")
    fmt = doc.get("format", "")
    if not isinstance(fmt, str) or not fmt.startswith(_FORMAT_PREFIX):
        raise ValueError("bad magic: not an occludet model file")
    if fmt != MODEL_FORMAT:
        raise ValueError(f"unsupported model format version {fmt!r}")
    components = []
    for rec in doc["components"]:
        h, w, q = rec["window_block_h"], rec["window_block_w"], rec["block_dim"]
        raw = base64.b64decode(rec["weights"].encode("ascii"), validate=True)
        if len(raw) != h * w * q * 4:
            raise ValueError("corrupt model file: weight payload size mismatch")
        weights = np.frombuffer(raw, dtype="<f4").reshape(h, w, q).copy()
        components.append(
            MixtureComponent(
                weights=weights,
                bias=float(rec["bias"]),
                unary_bias=float(rec["unary_bias"]),
                component_id=int(rec["id"]),
                avg_box=tuple(float(v) for v in rec["avg_box"]),
            )
        )
    return MixtureModel(
        components=components,
        ising=IsingConfig(alpha=float(doc["ising_alpha"])),
        metadata=doc.get("metadata", {}),
    )
