"""Grouped-attribution wrapper around a black-box predictor.

The wrapper decomposes a prediction into a weighted sum of per-group
partial logits: a group generator builds sparse masks over input segments,
the backbone embeds each masked input, and a group selector assigns sparse
scores to the groups.  The prediction is ``sum_i score_i * partial_logit_i``
computed on the same arithmetic path stored in the returned attribution,
so the explanation reconstructs the prediction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ops import attention_weights, sparsemax

__all__ = [
    "Backbone",
    "Segmentation",
    "GroupGenParams",
    "GroupSelectParams",
    "GroupedAttribution",
    "linear_backbone",
    "identity_backbone",
    "segment_pool",
    "generate_groups",
    "embed_groups",
    "select_groups",
    "sop_forward",
]


def _as_float_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class Backbone:
    """Black-box map from a (masked) input vector to an embedding.

    ``embed`` must be deterministic.  ``classifier`` holds one weight row
    per class over the embedding, so plain logits are
    ``classifier @ embed(x)``.  ``embed_vjp``, when provided, maps
    ``(x, upstream)`` to the gradient of ``upstream . embed(x)`` with
    respect to ``x``; training falls back to finite differences when it is
    absent.
    """

    embed: Callable[[np.ndarray], np.ndarray]
    classifier: np.ndarray
    d: int
    h: int
    embed_vjp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        classifier = _as_float_matrix(self.classifier, "classifier")
        object.__setattr__(self, "classifier", classifier)
        if classifier.shape[1] != self.h:
            raise ValueError(
                f"classifier has {classifier.shape[1]} columns, expected h={self.h}"
            )

    @property
    def n_classes(self) -> int:
        return self.classifier.shape[0]


def linear_backbone(weights, classifier) -> Backbone:
    """Backbone with ``embed(x) = weights @ x`` and an exact gradient hook."""
    weights = _as_float_matrix(weights, "weights")
    h, d = weights.shape
    return Backbone(
        embed=lambda x: weights @ x,
        classifier=classifier,
        d=d,
        h=h,
        embed_vjp=lambda x, upstream: weights.T @ upstream,
    )


def identity_backbone(classifier) -> Backbone:
    """Backbone whose embedding is the input itself (h = d)."""
    classifier = _as_float_matrix(classifier, "classifier")
    d = classifier.shape[1]
    return Backbone(
        embed=lambda x: np.asarray(x, dtype=np.float64),
        classifier=classifier,
        d=d,
        h=d,
        embed_vjp=lambda x, upstream: np.asarray(upstream, dtype=np.float64),
    )


@dataclass(frozen=True)
class Segmentation:
    """Partition of the feature axis into non-empty segments."""

    assignment: np.ndarray
    n_segments: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ValueError("assignment must be a non-empty 1-D index array")
        object.__setattr__(self, "assignment", assignment)
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if assignment.min() < 0 or assignment.max() >= self.n_segments:
            raise ValueError("segment indices must lie in [0, n_segments)")
        counts = np.bincount(assignment, minlength=self.n_segments)
        if np.any(counts == 0):
            empty = np.nonzero(counts == 0)[0].tolist()
            raise ValueError(f"segments {empty} contain no features")

    @property
    def n_features(self) -> int:
        return self.assignment.size

    @classmethod
    def contiguous(cls, n_features: int, n_segments: int) -> "Segmentation":
        """Patch-style segmenter: consecutive features in near-equal runs."""
        if not 1 <= n_segments <= n_features:
            raise ValueError(
                f"need 1 <= n_segments <= n_features, got {n_segments} of {n_features}"
            )
        assignment = np.minimum(
            np.arange(n_features) * n_segments // n_features, n_segments - 1
        )
        return cls(assignment=assignment, n_segments=n_segments)


@dataclass(frozen=True)
class GroupGenParams:
    """Per-head query/key weights over the segment dimension.

    ``w_q`` and ``w_k`` are stacked per head with shape
    (heads, n_segments, n_segments).
    """

    w_q: np.ndarray
    w_k: np.ndarray

    def __post_init__(self):
        w_q = np.asarray(self.w_q, dtype=np.float64)
        w_k = np.asarray(self.w_k, dtype=np.float64)
        if w_q.ndim != 3 or w_q.shape[1] != w_q.shape[2]:
            raise ValueError(f"w_q must have shape (heads, m, m), got {w_q.shape}")
        if w_k.shape != w_q.shape:
            raise ValueError(f"w_k shape {w_k.shape} differs from w_q {w_q.shape}")
        if w_q.shape[0] < 1:
            raise ValueError("need at least one head")
        object.__setattr__(self, "w_q", w_q)
        object.__setattr__(self, "w_k", w_k)

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def n_segments(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def random(cls, n_segments: int, heads: int, rng: np.random.Generator,
               std: float = 0.02) -> "GroupGenParams":
        shape = (heads, n_segments, n_segments)
        return cls(w_q=rng.normal(0.0, std, shape), w_k=rng.normal(0.0, std, shape))


@dataclass(frozen=True)
class GroupSelectParams:
    """Selector weights: query/key projections over the embedding plus the
    per-class value weights (initialized from the backbone classifier)."""

    w_q: np.ndarray
    w_k: np.ndarray
    classifier: np.ndarray

    def __post_init__(self):
        w_q = _as_float_matrix(self.w_q, "w_q")
        w_k = _as_float_matrix(self.w_k, "w_k")
        classifier = _as_float_matrix(self.classifier, "classifier")
        h = classifier.shape[1]
        for name, m in (("w_q", w_q), ("w_k", w_k)):
            if m.shape != (h, h):
                raise ValueError(f"{name} must be {h}x{h}, got {m.shape}")
        object.__setattr__(self, "w_q", w_q)
        object.__setattr__(self, "w_k", w_k)
        object.__setattr__(self, "classifier", classifier)

    @property
    def h(self) -> int:
        return self.classifier.shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifier.shape[0]

    @classmethod
    def random(cls, backbone: Backbone, rng: np.random.Generator,
               std: float = 0.02) -> "GroupSelectParams":
        h = backbone.h
        return cls(
            w_q=rng.normal(0.0, std, (h, h)),
            w_k=rng.normal(0.0, std, (h, h)),
            classifier=backbone.classifier.copy(),
        )


@dataclass(frozen=True)
class GroupedAttribution:
    """Groups with per-class scores and partial logits, plus the prediction.

    Invariants enforced on construction: mask entries and scores lie in
    [0, 1], each per-class score column sums to 1, and
    ``prediction == (scores * partial_logits).sum(axis=0)`` bit for bit
    (the prediction is that sum, stored as computed).
    """

    groups: np.ndarray
    scores: np.ndarray
    partial_logits: np.ndarray
    prediction: np.ndarray

    def __post_init__(self):
        groups = np.asarray(self.groups, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        logits = np.asarray(self.partial_logits, dtype=np.float64)
        prediction = np.asarray(self.prediction, dtype=np.float64)
        if groups.ndim != 2:
            raise ValueError("groups must be a (G, d) mask matrix")
        g = groups.shape[0]
        if scores.shape != logits.shape or scores.ndim != 2 or scores.shape[0] != g:
            raise ValueError("scores and partial_logits must both be (G, n_classes)")
        if prediction.shape != (scores.shape[1],):
            raise ValueError("prediction must have one entry per class")
        if groups.min() < 0.0 or groups.max() > 1.0:
            raise ValueError("mask entries must lie in [0, 1]")
        if scores.min() < 0.0 or scores.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")
        if np.any(np.abs(scores.sum(axis=0) - 1.0) > 1e-9):
            raise ValueError("each per-class score column must sum to 1")
        if not np.array_equal(prediction, (scores * logits).sum(axis=0)):
            raise ValueError("prediction does not reconstruct from scores and logits")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "partial_logits", logits)
        object.__setattr__(self, "prediction", prediction)

    @property
    def n_groups(self) -> int:
        return self.groups.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


def segment_pool(x: np.ndarray, seg: Segmentation) -> np.ndarray:
    """Mean of the input features within each segment."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (seg.n_features,):
        raise ValueError(
            f"input length {x.shape} does not match segmentation over {seg.n_features}"
        )
    sums = np.bincount(seg.assignment, weights=x, minlength=seg.n_segments)
    counts = np.bincount(seg.assignment, minlength=seg.n_segments)
    return sums / counts


def generate_groups(x, seg: Segmentation, params: GroupGenParams) -> np.ndarray:
    """Build sparse group masks from per-head attention over segments.

    The input is mean-pooled to one value per segment; each head scores
    segment pairs with scaled query-key products of the pooled vector and
    projects every score row onto the simplex with sparsemax.  Each of the
    ``n_segments * heads`` rows becomes one mask, with the segment weight
    broadcast to all features of that segment.
    """
    if params.n_segments != seg.n_segments:
        raise ValueError(
            f"params cover {params.n_segments} segments, segmentation has {seg.n_segments}"
        )
    pooled = segment_pool(x, seg)
    scale = float(np.sqrt(seg.n_segments))
    rows = []
    for head in range(params.heads):
        queries = params.w_q[head] * pooled[None, :]
        keys = params.w_k[head] * pooled[None, :]
        rows.append(attention_weights(queries, keys, scale, "sparsemax"))
    segment_weights = np.vstack(rows)
    return segment_weights[:, seg.assignment]


def embed_groups(x, masks, backbone: Backbone) -> np.ndarray:
    """Embed each masked input ``mask * x`` through the backbone."""
    x = np.asarray(x, dtype=np.float64)
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if masks.shape[1] != x.size:
        raise ValueError(f"masks have width {masks.shape[1]}, input has {x.size}")
    out = np.empty((masks.shape[0], backbone.h))
    for i, mask in enumerate(masks):
        z = np.asarray(backbone.embed(mask * x), dtype=np.float64)
        if z.shape != (backbone.h,):
            raise ValueError(
                f"backbone embed returned shape {z.shape}, expected ({backbone.h},)"
            )
        out[i] = z
    return out


def select_groups(z, params: GroupSelectParams) -> tuple[np.ndarray, np.ndarray]:
    """Score groups per class with sparse attention and compute partial logits.

    For class k the query is the projected class weight ``w_q @ C_k`` and
    group i keys in with ``w_k @ z_i``; the affinity column is sparsemaxed
    over groups.  Partial logits are the plain per-group class logits
    ``C_k . z_i``.  Returns ``(scores, partial_logits)``, both
    (G, n_classes).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] < 1:
        raise ValueError("need at least one group embedding")
    if z.shape[1] != params.h:
        raise ValueError(f"embeddings have width {z.shape[1]}, expected {params.h}")
    queries = params.classifier @ params.w_q.T
    keys = z @ params.w_k.T
    affinities = keys @ queries.T / np.sqrt(params.h)
    scores = np.column_stack(
        [sparsemax(affinities[:, k]) for k in range(params.n_classes)]
    )
    partial_logits = z @ params.classifier.T
    return scores, partial_logits


def sop_forward(x, seg: Segmentation, gen_params: GroupGenParams,
                sel_params: GroupSelectParams, backbone: Backbone) -> GroupedAttribution:
    """Full forward pass: generate groups, embed, select, and predict.

    The returned attribution's prediction is exactly
    ``(scores * partial_logits).sum(axis=0)``.
    """
    groups = generate_groups(x, seg, gen_params)
    z = embed_groups(x, groups, backbone)
    scores, partial_logits = select_groups(z, sel_params)
    prediction = (scores * partial_logits).sum(axis=0)
    return GroupedAttribution(
        groups=groups,
        scores=scores,
        partial_logits=partial_logits,
        prediction=prediction,
    )
