"""Perturbation-based faithfulness metrics.

Covers per-feature and grouped deletion/insertion errors (pointwise and
summed over the full powerset), progressive insertion/deletion curves with
trapezoidal AUC, comprehensiveness/sufficiency, attribution sparsity, and
flattening of grouped attributions to per-feature scores.

Perturbation baseline throughout is zero-masking: a "removed" feature is
set to 0.  Group membership of a real-valued mask is its strict support
``mask > 0`` (sparsemax produces exact zeros, so the support is
well-defined).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .serialize import write_csv_atomic, write_json_atomic

__all__ = [
    "PerturbationReport",
    "deletion_error",
    "insertion_error",
    "total_powerset_error",
    "grouped_deletion_error",
    "grouped_insertion_error",
    "insertion_curve",
    "deletion_curve",
    "grouped_curve",
    "comprehensiveness",
    "sufficiency",
    "sparsity",
    "flatten_grouped",
    "ranking_from_attribution",
]

POWERSET_LIMIT = 20


@dataclass(frozen=True)
class PerturbationReport:
    """One perturbation curve: metric name, points, AUC, and metadata.

    ``fractions`` are strictly increasing in [0, 1]; ``auc`` is the mean
    curve height (trapezoid integral divided by the covered span), which
    keeps a constant model's AUC equal to the constant even when a grouped
    curve does not reach fraction 1.
    """

    metric: str
    fractions: np.ndarray
    probabilities: np.ndarray
    auc: float
    total_error: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        fractions = np.asarray(self.fractions, dtype=np.float64)
        probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if fractions.shape != probabilities.shape or fractions.ndim != 1:
            raise ValueError("fractions and probabilities must be matching vectors")
        if fractions.size < 2:
            raise ValueError("a curve needs at least two points")
        if fractions[0] < 0.0 or fractions[-1] > 1.0 or np.any(np.diff(fractions) <= 0):
            raise ValueError("fractions must be strictly increasing within [0, 1]")
        lo, hi = probabilities.min(), probabilities.max()
        if not (lo - 1e-12 <= self.auc <= hi + 1e-12):
            raise ValueError("AUC must lie within the curve's value range")
        object.__setattr__(self, "fractions", fractions)
        object.__setattr__(self, "probabilities", probabilities)

    def to_dict(self) -> dict:
        out = {
            "metric": self.metric,
            "points": [
                [float(f), float(p)]
                for f, p in zip(self.fractions, self.probabilities)
            ],
            "auc": float(self.auc),
            "metadata": dict(self.metadata),
        }
        if self.total_error is not None:
            out["total_error"] = float(self.total_error)
        return out

    def write_json(self, path) -> None:
        write_json_atomic(path, self.to_dict())

    def write_csv(self, path) -> None:
        rows = zip(self.fractions.tolist(), self.probabilities.tolist())
        write_csv_atomic(path, ["fraction", "probability"], rows)


def _as_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("input must be a non-empty vector")
    return x


def _as_subset(subset, d: int) -> np.ndarray:
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= d):
        raise ValueError(f"subset indices must lie in [0, {d})")
    if idx.size != np.unique(idx).size:
        raise ValueError("subset contains repeated indices")
    return idx


def deletion_error(f: Callable, x, alpha, subset) -> float:
    """|f(x) - f(x with subset zeroed) - sum of alpha over subset|."""
    x = _as_input(x)
    alpha = np.asarray(alpha, dtype=np.float64)
    idx = _as_subset(subset, x.size)
    x_del = x.copy()
    x_del[idx] = 0.0
    return abs(float(f(x)) - float(f(x_del)) - float(alpha[idx].sum()))


def insertion_error(f: Callable, x, alpha, subset) -> float:
    """|f(subset of x on a zero baseline) - f(0) - sum of alpha over subset|."""
    x = _as_input(x)
    alpha = np.asarray(alpha, dtype=np.float64)
    idx = _as_subset(subset, x.size)
    x_ins = np.zeros_like(x)
    x_ins[idx] = x[idx]
    return abs(float(f(x_ins)) - float(f(np.zeros_like(x))) - float(alpha[idx].sum()))


def _iter_powerset(d: int):
    for bits in range(1 << d):
        yield [i for i in range(d) if bits >> i & 1]


def total_powerset_error(f: Callable, x, alpha, kind: str) -> float:
    """Sum of the deletion or insertion error over every feature subset.

    Enumerates all 2^d subsets (binary counting, bit i = feature i), so the
    dimension is capped at ``POWERSET_LIMIT``.
    """
    x = _as_input(x)
    if x.size > POWERSET_LIMIT:
        raise ValueError(
            f"powerset enumeration capped at d={POWERSET_LIMIT}, got {x.size}"
        )
    if kind == "deletion":
        err = deletion_error
    elif kind == "insertion":
        err = insertion_error
    else:
        raise ValueError(f"kind must be 'deletion' or 'insertion', got {kind!r}")
    return float(sum(err(f, x, alpha, s) for s in _iter_powerset(x.size)))


def _group_supports(groups, d: int) -> np.ndarray:
    groups = np.atleast_2d(np.asarray(groups, dtype=np.float64))
    if groups.shape[1] != d:
        raise ValueError(f"group masks have width {groups.shape[1]}, input has {d}")
    return groups > 0


def grouped_deletion_error(f: Callable, x, groups, scores, subset) -> float:
    """Grouped analogue of :func:`deletion_error`.

    A group contributes its score when the deletion removes any of its
    members, i.e. when the group's support intersects the deleted subset.
    """
    x = _as_input(x)
    idx = _as_subset(subset, x.size)
    supports = _group_supports(groups, x.size)
    scores = np.asarray(scores, dtype=np.float64)
    deleted = np.zeros(x.size, dtype=bool)
    deleted[idx] = True
    hit = (supports & deleted).any(axis=1)
    x_del = x.copy()
    x_del[idx] = 0.0
    return abs(float(f(x)) - float(f(x_del)) - float(scores[hit].sum()))


def grouped_insertion_error(f: Callable, x, groups, scores, subset) -> float:
    """Grouped analogue of :func:`insertion_error`.

    A group contributes its score once all of its members are inserted,
    i.e. when the group's support is a subset of the inserted features.
    """
    x = _as_input(x)
    idx = _as_subset(subset, x.size)
    supports = _group_supports(groups, x.size)
    scores = np.asarray(scores, dtype=np.float64)
    inserted = np.zeros(x.size, dtype=bool)
    inserted[idx] = True
    covered = (supports <= inserted).all(axis=1)
    x_ins = np.zeros_like(x)
    x_ins[idx] = x[idx]
    return abs(
        float(f(x_ins)) - float(f(np.zeros_like(x))) - float(scores[covered].sum())
    )


def ranking_from_attribution(alpha) -> np.ndarray:
    """Feature order by descending attribution, ties broken by index."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.argsort(-alpha, kind="stable")


def _check_ranking(ranking, d: int) -> np.ndarray:
    ranking = np.asarray(ranking, dtype=np.int64)
    if ranking.shape != (d,) or not np.array_equal(np.sort(ranking), np.arange(d)):
        raise ValueError("ranking must be a permutation of all feature indices")
    return ranking


def _mean_height_auc(fractions: np.ndarray, probabilities: np.ndarray) -> float:
    span = fractions[-1] - fractions[0]
    auc = float(np.trapezoid(probabilities, fractions) / span)
    # the exact mean height lies in [min, max]; clamp away rounding dust so
    # a constant curve yields exactly the constant
    return min(max(auc, float(probabilities.min())), float(probabilities.max()))


def insertion_curve(model: Callable, x, ranking, step: int = 1,
                    metadata: dict | None = None) -> PerturbationReport:
    """Insert features onto a zero baseline in ranking order, ``step`` at a
    time, recording the model probability after every chunk."""
    x = _as_input(x)
    ranking = _check_ranking(ranking, x.size)
    if step < 1:
        raise ValueError("step must be >= 1")
    counts = list(range(0, x.size, step)) + [x.size]
    fractions, probabilities = [], []
    for count in counts:
        x_ins = np.zeros_like(x)
        keep = ranking[:count]
        x_ins[keep] = x[keep]
        fractions.append(count / x.size)
        probabilities.append(float(model(x_ins)))
    return PerturbationReport(
        metric="insertion",
        fractions=np.array(fractions),
        probabilities=np.array(probabilities),
        auc=_mean_height_auc(np.array(fractions), np.array(probabilities)),
        metadata=metadata or {},
    )


def deletion_curve(model: Callable, x, ranking, step: int = 1,
                   metadata: dict | None = None) -> PerturbationReport:
    """Delete features from the full input in ranking order; the x axis is
    the fraction deleted, so the curve starts at the unperturbed model."""
    x = _as_input(x)
    ranking = _check_ranking(ranking, x.size)
    if step < 1:
        raise ValueError("step must be >= 1")
    counts = list(range(0, x.size, step)) + [x.size]
    fractions, probabilities = [], []
    for count in counts:
        x_del = x.copy()
        x_del[ranking[:count]] = 0.0
        fractions.append(count / x.size)
        probabilities.append(float(model(x_del)))
    return PerturbationReport(
        metric="deletion",
        fractions=np.array(fractions),
        probabilities=np.array(probabilities),
        auc=_mean_height_auc(np.array(fractions), np.array(probabilities)),
        metadata=metadata or {},
    )


def grouped_curve(model: Callable, x, groups, scores, direction: str,
                  metadata: dict | None = None) -> PerturbationReport:
    """Insert or delete one group per step, highest score first.

    Features already processed by an earlier group are skipped; a group
    whose support adds nothing contributes no curve point.  The fraction
    axis counts processed features, so it ends below 1 when the groups do
    not cover the input.
    """
    x = _as_input(x)
    supports = _group_supports(groups, x.size)
    scores = np.asarray(scores, dtype=np.float64)
    if supports.shape[0] == 0:
        raise ValueError("need at least one group")
    if scores.shape != (supports.shape[0],):
        raise ValueError("scores must hold one value per group")
    if direction not in ("insertion", "deletion"):
        raise ValueError(f"direction must be 'insertion' or 'deletion', got {direction!r}")

    order = np.argsort(-scores, kind="stable")
    processed = np.zeros(x.size, dtype=bool)
    if direction == "insertion":
        start = float(model(np.zeros_like(x)))
    else:
        start = float(model(x))
    fractions, probabilities = [0.0], [start]
    for g in order:
        fresh = supports[g] & ~processed
        if not fresh.any():
            continue
        processed |= fresh
        if direction == "insertion":
            probe = np.where(processed, x, 0.0)
        else:
            probe = np.where(processed, 0.0, x)
        fractions.append(processed.sum() / x.size)
        probabilities.append(float(model(probe)))
    return PerturbationReport(
        metric=f"grouped_{direction}",
        fractions=np.array(fractions),
        probabilities=np.array(probabilities),
        auc=_mean_height_auc(np.array(fractions), np.array(probabilities)),
        metadata=metadata or {},
    )


def _check_rationale(rationale, d: int) -> np.ndarray:
    r = np.asarray(rationale, dtype=np.float64)
    if r.shape != (d,) or not np.all(np.isin(r, (0.0, 1.0))):
        raise ValueError("rationale must be a binary mask over the features")
    return r


def _class_probability(model: Callable, x: np.ndarray, class_index: int) -> float:
    probs = np.asarray(model(x), dtype=np.float64)
    if not 0 <= class_index < probs.size:
        raise ValueError(f"class index {class_index} out of range for {probs.size} classes")
    return float(probs[class_index])


def comprehensiveness(model: Callable, x, rationale, class_index: int) -> float:
    """Probability drop when the rationale features are removed."""
    x = _as_input(x)
    r = _check_rationale(rationale, x.size)
    return _class_probability(model, x, class_index) - _class_probability(
        model, x * (1.0 - r), class_index
    )


def sufficiency(model: Callable, x, rationale, class_index: int) -> float:
    """Probability drop when only the rationale features are kept."""
    x = _as_input(x)
    r = _check_rationale(rationale, x.size)
    return _class_probability(model, x, class_index) - _class_probability(
        model, x * r, class_index
    )


def sparsity(groups, scores) -> float:
    """Mean fraction of active features over the positively scored groups.

    Lower is sparser.  Groups with score exactly 0 are excluded from the
    average.
    """
    groups = np.atleast_2d(np.asarray(groups, dtype=np.float64))
    scores = np.asarray(scores, dtype=np.float64)
    if groups.shape[0] == 0:
        raise ValueError("need at least one group")
    if scores.shape != (groups.shape[0],):
        raise ValueError("scores must hold one value per group")
    active = scores > 0
    if not active.any():
        raise ValueError("no group has positive score")
    member_fractions = (groups[active] > 0).mean(axis=1)
    return float(member_fractions.mean())


def flatten_grouped(groups, scores) -> np.ndarray:
    """Weighted sum of group masks: per-feature attribution
    ``alpha = groups^T @ scores`` (per class when scores is a matrix)."""
    groups = np.atleast_2d(np.asarray(groups, dtype=np.float64))
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != groups.shape[0]:
        raise ValueError("scores must align with groups along the group axis")
    return groups.T @ scores
