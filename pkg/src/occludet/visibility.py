"""Latent-visibility window responses.

A window is scored by maximizing, over binary per-block visibility flags,
the classification score (visible blocks contribute their linear term,
occluded blocks a learned unary bias) minus a contiguity penalty that
charges alpha per 4-neighbor label disagreement. The maximization is solved
exactly by reduction to an s-t min-cut (kernels.mincut_batch); a cheap
upper bound obtained by dropping the pairwise terms serves as a pre-filter.

Padding and truncation blocks arrive with inferable=False: their flags are
clamped to 0, they always contribute the unary bias, and they are excluded
from both maximizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .blockgrid import WindowFeatures


@dataclass
class VisibilityMask:
    """Binary visibility flags on a window's block lattice."""

    flags: np.ndarray  # (h, w) bool, True = visible
    fixed: np.ndarray  # (h, w) bool, True = clamped to invisible

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        self.fixed = np.asarray(self.fixed, dtype=bool)
        if self.flags.shape != self.fixed.shape:
            raise ValueError("flags and fixed shapes differ")
        if np.any(self.flags & self.fixed):
            raise ValueError("fixed blocks must have visibility 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape


def all_visible_mask(inferable: np.ndarray) -> VisibilityMask:
    """Visible everywhere except on clamped (non-inferable) blocks."""
    inferable = np.asarray(inferable, dtype=bool)
    return VisibilityMask(flags=inferable.copy(), fixed=~inferable)


@dataclass
class MixtureComponent:
    """One linear classifier of the mixture: per-block weights, bias and
    the unary bias substituted for occluded blocks."""

    weights: np.ndarray  # (win_h, win_w, q) float32
    bias: float
    unary_bias: float
    component_id: int = 0
    avg_box: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 3:
            raise ValueError("weights must be (win_h, win_w, q)")
        if not (np.isfinite(self.bias) and np.isfinite(self.unary_bias)
                and np.all(np.isfinite(self.weights))):
            raise ValueError("component parameters must be finite")

    @property
    def window_block_h(self) -> int:
        return self.weights.shape[0]

    @property
    def window_block_w(self) -> int:
        return self.weights.shape[1]

    @property
    def block_count(self) -> int:
        return self.weights.shape[0] * self.weights.shape[1]


@dataclass
class IsingConfig:
    """Contiguity prior: penalty weight per disagreeing 4-neighbor pair.

    alpha >= 0 keeps the pairwise energy submodular, which is what makes
    exact min-cut inference possible.
    """

    alpha: float = 0.05

    def __post_init__(self):
        if not (self.alpha >= 0.0):
            raise ValueError("alpha must be >= 0")

    @staticmethod
    def neighbor_pairs(shape: tuple[int, int]) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        h, w = shape
        pairs = []
        for r in range(h):
            for c in range(w):
                if r + 1 < h:
                    pairs.append(((r, c), (r + 1, c)))
                if c + 1 < w:
                    pairs.append(((r, c), (r, c + 1)))
        return pairs


@dataclass
class ResponseResult:
    """Optimal response of one window: score, maximizing mask, and the
    cached per-block linear terms."""

    score: float
    mask: VisibilityMask
    per_block_terms: np.ndarray  # (win_h, win_w)


def per_block_terms(x: WindowFeatures, c: MixtureComponent) -> np.ndarray:
    """Linear term of every block (w_i . B_i), float64."""
    if x.blocks.shape[:2] != (c.window_block_h, c.window_block_w):
        raise ValueError(
            f"window shape {x.blocks.shape[:2]} does not match component "
            f"{(c.window_block_h, c.window_block_w)}"
        )
    return np.einsum("hwq,hwq->hw", x.blocks, c.weights.astype(np.float64))


def classification_score(x: WindowFeatures, v: VisibilityMask, c: MixtureComponent) -> float:
    """Score for a given visibility pattern: bias + sum over blocks of the
    visible linear term or the unary bias."""
    terms = per_block_terms(x, c)
    if v.shape != terms.shape:
        raise ValueError("mask shape does not match window")
    return float(c.bias + np.where(v.flags, terms, c.unary_bias).sum())


def ising_penalty(v: VisibilityMask) -> int:
    """Number of 4-neighbor pairs with disagreeing labels."""
    f = v.flags
    return int(np.sum(f[1:, :] != f[:-1, :]) + np.sum(f[:, 1:] != f[:, :-1]))


def boundary_counts(labels: np.ndarray) -> np.ndarray:
    """Batch disagreement counts for (n, h, w) label arrays."""
    return (
        np.sum(labels[:, 1:, :] != labels[:, :-1, :], axis=(1, 2))
        + np.sum(labels[:, :, 1:] != labels[:, :, :-1], axis=(1, 2))
    )


def response_batch(
    terms: np.ndarray,
    fixed: np.ndarray,
    c: MixtureComponent,
    cfg: IsingConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact responses for a batch of windows given per-block terms.

    terms: (n, h, w) float64, fixed: (n, h, w) bool.
    Returns (scores (n,), labels (n, h, w) uint8).
    """
    labels = kernels.mincut_batch(terms, fixed, c.unary_bias, cfg.alpha)
    visible = labels.astype(bool)
    totals = np.where(visible, terms, c.unary_bias).sum(axis=(1, 2))
    scores = c.bias + totals - cfg.alpha * boundary_counts(labels)
    return scores, labels


def upper_bound_batch(terms: np.ndarray, fixed: np.ndarray, c: MixtureComponent) -> np.ndarray:
    """Prior-free bound: every free block independently takes the better of
    its linear term and the unary bias."""
    best = np.where(fixed, c.unary_bias, np.maximum(terms, c.unary_bias))
    return c.bias + best.sum(axis=(1, 2))


def window_response(x: WindowFeatures, c: MixtureComponent, cfg: IsingConfig) -> ResponseResult:
    """Maximize the window response over visibility flags, exactly."""
    terms = per_block_terms(x, c)
    if not np.all(np.isfinite(terms)):
        raise ValueError("non-finite per-block terms")
    fixed = ~np.asarray(x.inferable, dtype=bool)
    scores, labels = response_batch(terms[None], fixed[None], c, cfg)
    mask = VisibilityMask(flags=labels[0].astype(bool), fixed=fixed)
    return ResponseResult(score=float(scores[0]), mask=mask, per_block_terms=terms)


def upper_bound(x: WindowFeatures, c: MixtureComponent) -> float:
    terms = per_block_terms(x, c)
    fixed = ~np.asarray(x.inferable, dtype=bool)
    return float(upper_bound_batch(terms[None], fixed[None], c)[0])


def filtered_response(
    x: WindowFeatures, c: MixtureComponent, cfg: IsingConfig, threshold: float
) -> Optional[ResponseResult]:
    """Full response only when the cheap bound clears the threshold
    (strictly); the bound dominates the response, so nothing scoring above
    the threshold is ever dropped."""
    if upper_bound(x, c) <= threshold:
        return None
    return window_response(x, c, cfg)
