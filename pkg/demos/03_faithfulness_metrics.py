"""Perturbation faithfulness metrics on models with known structure.

A linear model admits a per-feature attribution with zero deletion and
insertion error over the whole powerset; a product of features does not.
Progressive insertion/deletion curves summarize attribution quality by
the area under the model-probability curve.
"""

import numpy as np

from sumparts.faithfulness import (
    comprehensiveness,
    deletion_curve,
    flatten_grouped,
    grouped_curve,
    insertion_curve,
    ranking_from_attribution,
    sparsity,
    sufficiency,
    total_powerset_error,
)

# linear model: attribution theta_i * x_i is perfectly faithful
theta = np.array([1.0, 2.0, -3.0, 4.0])
x = np.array([2.0, -1.0, 1.0, 3.0])
linear = lambda v: float(theta @ v)  # noqa: E731
alpha = theta * x
print("linear model, alpha = theta * x")
print("  total deletion error :", total_powerset_error(linear, x, alpha, "deletion"))
print("  total insertion error:", total_powerset_error(linear, x, alpha, "insertion"))

# product model: every per-feature attribution fails some subset
product = lambda v: float(np.prod(v))  # noqa: E731
ones = np.ones(4)
best_uniform = np.full(4, 1.0 / 2.0)
print("\nproduct model at the all-ones input")
print("  zero attribution, insertion:",
      total_powerset_error(product, ones, np.zeros(4), "insertion"))
print("  uniform attribution, deletion:",
      total_powerset_error(product, ones, best_uniform, "deletion"))

# insertion/deletion curves for a probability-like model
prob_model = lambda v: float(1.0 / (1.0 + np.exp(-theta @ v / 4.0)))  # noqa: E731
ranking = ranking_from_attribution(alpha)
ins = insertion_curve(prob_model, x, ranking)
dele = deletion_curve(prob_model, x, ranking)
print("\ncurves with the attribution ranking")
print("  insertion points:", list(zip(ins.fractions, np.round(ins.probabilities, 3))))
print("  insertion AUC:", round(ins.auc, 4), " deletion AUC:", round(dele.auc, 4))

# grouped attribution: flatten for per-feature tests, or insert per group
groups = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
scores = np.array([0.8, 0.2])
print("\ngrouped attribution")
print("  flattened:", flatten_grouped(groups, scores))
print("  grouped insertion AUC:",
      round(grouped_curve(prob_model, x, groups, scores, "insertion").auc, 4))
print("  sparsity (mean active fraction):", sparsity(groups, scores))

# rationale-style metrics: drop when removed vs kept alone
vector_model = lambda v: np.array([prob_model(v), 1.0 - prob_model(v)])  # noqa: E731
rationale = np.array([1.0, 0.0, 0.0, 1.0])
print("\nrationale metrics for class 0")
print("  comprehensiveness:", round(comprehensiveness(vector_model, x, rationale, 0), 4))
print("  sufficiency      :", round(sufficiency(vector_model, x, rationale, 0), 4))
