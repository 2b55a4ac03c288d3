"""Gradient-descent training of the group generator and selector.

The backbone stays frozen; only the generator query/key weights, the
selector query/key projections, and the value weights (initialized from
the backbone classifier) are updated.  Gradients are derived by hand and
flow through both sparsemax blocks via their exact generalized Jacobians.
The backbone contributes through its ``embed_vjp`` hook when present,
otherwise through central finite differences on ``embed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    Backbone,
    GroupGenParams,
    GroupSelectParams,
    Segmentation,
    segment_pool,
)
from .ops import softmax, sparsemax, sparsemax_vjp

__all__ = [
    "TrainConfig",
    "TrainResult",
    "init_params",
    "loss_and_gradients",
    "train",
    "training_accuracy",
    "pack_params",
    "unpack_params",
]

_FD_STEP = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    learning_rate: float
    seed: int
    heads: int = 2
    init_std: float = 0.02

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite")


@dataclass
class TrainResult:
    gen_params: GroupGenParams
    sel_params: GroupSelectParams
    loss_history: list[float] = field(default_factory=list)


def init_params(seg: Segmentation, backbone: Backbone,
                config: TrainConfig) -> tuple[GroupGenParams, GroupSelectParams]:
    """Seeded Gaussian init for the attention weights; value weights copied
    from the backbone classifier.  Draw order is fixed so checkpoints
    reproduce bit for bit per seed."""
    rng = np.random.default_rng(config.seed)
    gen = GroupGenParams.random(seg.n_segments, config.heads, rng, config.init_std)
    sel = GroupSelectParams.random(backbone, rng, config.init_std)
    return gen, sel


def _embed_vjp(backbone: Backbone, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if backbone.embed_vjp is not None:
        return np.asarray(backbone.embed_vjp(x, upstream), dtype=np.float64)
    grad = np.zeros_like(x)
    probe = x.copy()
    for j in range(x.size):
        orig = probe[j]
        probe[j] = orig + _FD_STEP
        hi = upstream @ np.asarray(backbone.embed(probe), dtype=np.float64)
        probe[j] = orig - _FD_STEP
        lo = upstream @ np.asarray(backbone.embed(probe), dtype=np.float64)
        probe[j] = orig
        grad[j] = (hi - lo) / (2.0 * _FD_STEP)
    return grad


def _forward_one(x, seg, gen, sel, backbone):
    """Forward pass keeping every intermediate needed by the backward pass."""
    pooled = segment_pool(x, seg)
    m = seg.n_segments
    gen_scale = np.sqrt(m)
    queries = gen.w_q * pooled[None, None, :]          # (heads, m, m)
    keys = gen.w_k * pooled[None, None, :]
    raw = queries @ np.swapaxes(keys, 1, 2) / gen_scale
    seg_weights = np.vstack(
        [np.vstack([sparsemax(row) for row in raw[a]]) for a in range(gen.heads)]
    )                                                   # (G, m)
    masks = seg_weights[:, seg.assignment]              # (G, d)
    masked = masks * x[None, :]
    z = np.vstack([np.asarray(backbone.embed(u), dtype=np.float64) for u in masked])
    sel_queries = sel.classifier @ sel.w_q.T            # (K, h)
    sel_keys = z @ sel.w_k.T                            # (G, h)
    sel_scale = np.sqrt(sel.h)
    affinities = sel_keys @ sel_queries.T / sel_scale   # (G, K)
    scores = np.column_stack(
        [sparsemax(affinities[:, k]) for k in range(sel.n_classes)]
    )
    partial_logits = z @ sel.classifier.T               # (G, K)
    prediction = (scores * partial_logits).sum(axis=0)
    return {
        "pooled": pooled, "gen_scale": gen_scale, "queries": queries, "keys": keys,
        "raw": raw, "seg_weights": seg_weights, "masks": masks, "masked": masked,
        "z": z, "sel_queries": sel_queries, "sel_keys": sel_keys,
        "sel_scale": sel_scale, "affinities": affinities, "scores": scores,
        "partial_logits": partial_logits, "prediction": prediction,
    }


def _backward_one(x, seg, gen, sel, backbone, cache, d_pred):
    """Hand-derived gradients of one example's loss w.r.t. all parameters."""
    m = seg.n_segments
    z = cache["z"]
    scores = cache["scores"]
    partial_logits = cache["partial_logits"]
    affinities = cache["affinities"]

    d_scores = d_pred[None, :] * partial_logits
    d_logits = d_pred[None, :] * scores
    d_aff = np.column_stack(
        [sparsemax_vjp(affinities[:, k], d_scores[:, k]) for k in range(sel.n_classes)]
    )

    d_sel_keys = d_aff @ cache["sel_queries"] / cache["sel_scale"]   # (G, h)
    d_sel_queries = d_aff.T @ cache["sel_keys"] / cache["sel_scale"]  # (K, h)
    d_w_q_sel = d_sel_queries.T @ sel.classifier                      # (h, h)
    d_w_k_sel = d_sel_keys.T @ z                                      # (h, h)
    d_classifier = d_sel_queries @ sel.w_q + d_logits.T @ z           # (K, h)
    d_z = d_sel_keys @ sel.w_k + d_logits @ sel.classifier            # (G, h)

    d_masked = np.vstack(
        [_embed_vjp(backbone, cache["masked"][g], d_z[g]) for g in range(z.shape[0])]
    )
    d_masks = d_masked * x[None, :]
    d_seg_weights = np.vstack(
        [np.bincount(seg.assignment, weights=row, minlength=m) for row in d_masks]
    )
    d_raw = np.empty_like(cache["raw"])
    for a in range(gen.heads):
        for r in range(m):
            d_raw[a, r] = sparsemax_vjp(
                cache["raw"][a, r], d_seg_weights[a * m + r]
            )
    d_queries = d_raw @ cache["keys"] / cache["gen_scale"]
    d_keys = np.swapaxes(d_raw, 1, 2) @ cache["queries"] / cache["gen_scale"]
    pooled = cache["pooled"]
    d_w_q_gen = d_queries * pooled[None, None, :]
    d_w_k_gen = d_keys * pooled[None, None, :]

    return {
        "gen_w_q": d_w_q_gen, "gen_w_k": d_w_k_gen,
        "sel_w_q": d_w_q_sel, "sel_w_k": d_w_k_sel,
        "classifier": d_classifier,
    }


def loss_and_gradients(inputs, labels, seg: Segmentation, gen: GroupGenParams,
                       sel: GroupSelectParams, backbone: Backbone):
    """Mean cross-entropy of softmax(prediction) over the batch, with its
    gradient for every trainable parameter."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("dataset must be non-empty")
    if labels.shape != (n,):
        raise ValueError("labels must align with inputs")
    if labels.min() < 0 or labels.max() >= sel.n_classes:
        raise ValueError("labels must lie in [0, n_classes)")

    total_loss = 0.0
    grads = {
        "gen_w_q": np.zeros_like(gen.w_q), "gen_w_k": np.zeros_like(gen.w_k),
        "sel_w_q": np.zeros_like(sel.w_q), "sel_w_k": np.zeros_like(sel.w_k),
        "classifier": np.zeros_like(sel.classifier),
    }
    for x, label in zip(inputs, labels):
        cache = _forward_one(x, seg, gen, sel, backbone)
        probs = softmax(cache["prediction"])
        total_loss += -np.log(probs[label])
        d_pred = (probs - np.eye(sel.n_classes)[label]) / n
        g = _backward_one(x, seg, gen, sel, backbone, cache, d_pred)
        for key in grads:
            grads[key] += g[key]
    return total_loss / n, grads


def train(inputs, labels, seg: Segmentation, backbone: Backbone,
          config: TrainConfig) -> TrainResult:
    """Full-batch gradient descent with a fixed step size.

    Records the loss at the parameters of every step, in order.  Aborts
    with ``FloatingPointError`` if the loss turns non-finite.
    """
    gen, sel = init_params(seg, backbone, config)
    history: list[float] = []
    for step in range(config.steps):
        loss, grads = loss_and_gradients(inputs, labels, seg, gen, sel, backbone)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"loss became non-finite at step {step} "
                f"(lr={config.learning_rate}, last finite losses: {history[-3:]})"
            )
        history.append(float(loss))
        lr = config.learning_rate
        gen = GroupGenParams(
            w_q=gen.w_q - lr * grads["gen_w_q"],
            w_k=gen.w_k - lr * grads["gen_w_k"],
        )
        sel = GroupSelectParams(
            w_q=sel.w_q - lr * grads["sel_w_q"],
            w_k=sel.w_k - lr * grads["sel_w_k"],
            classifier=sel.classifier - lr * grads["classifier"],
        )
    return TrainResult(gen_params=gen, sel_params=sel, loss_history=history)


def training_accuracy(inputs, labels, seg: Segmentation, gen: GroupGenParams,
                      sel: GroupSelectParams, backbone: Backbone) -> float:
    """Fraction of examples whose argmax prediction matches the label."""
    from .model import sop_forward

    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    hits = 0
    for x, label in zip(inputs, labels):
        attribution = sop_forward(x, seg, gen, sel, backbone)
        hits += int(np.argmax(attribution.prediction) == label)
    return hits / inputs.shape[0]


def pack_params(gen: GroupGenParams, sel: GroupSelectParams) -> np.ndarray:
    """Flatten all trainable parameters into one vector (for gradient checks)."""
    return np.concatenate([
        gen.w_q.ravel(), gen.w_k.ravel(),
        sel.w_q.ravel(), sel.w_k.ravel(), sel.classifier.ravel(),
    ])


def unpack_params(vec, template_gen: GroupGenParams,
                  template_sel: GroupSelectParams) -> tuple[GroupGenParams, GroupSelectParams]:
    """Inverse of :func:`pack_params` using the templates' shapes."""
    vec = np.asarray(vec, dtype=np.float64)
    pieces = []
    offset = 0
    for shape in (template_gen.w_q.shape, template_gen.w_k.shape,
                  template_sel.w_q.shape, template_sel.w_k.shape,
                  template_sel.classifier.shape):
        size = int(np.prod(shape))
        pieces.append(vec[offset:offset + size].reshape(shape))
        offset += size
    if offset != vec.size:
        raise ValueError("parameter vector has the wrong length")
    gen = GroupGenParams(w_q=pieces[0], w_k=pieces[1])
    sel = GroupSelectParams(w_q=pieces[2], w_k=pieces[3], classifier=pieces[4])
    return gen, sel
