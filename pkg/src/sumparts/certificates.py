"""Computational certificates of per-feature attribution error lower bounds.

For a monomial (product of all features) the best possible total deletion
error over the whole powerset, and for a three-part binomial the best
possible total insertion error, are each the optimum of an L1-minimization
problem over attributions.  This module builds those programs row by row
from the powerset, solves them as linear programs, cross-checks the
monomial family against an exact symmetry-reduced scan, verifies the
zero-error grouped constructions exhaustively, and fits exponential growth
curves to the resulting minima.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .faithfulness import (
    grouped_deletion_error,
    grouped_insertion_error,
    total_powerset_error,
)

__all__ = [
    "PolynomialSpec",
    "L1Program",
    "ExponentialFit",
    "build_program",
    "solve_l1",
    "monomial_scan_minimum",
    "min_deletion_error_monomial",
    "min_insertion_error_binomial",
    "verify_lemma_monomial_insertion",
    "verify_corollary_grouped",
    "fit_exponential",
]

LP_DIMENSION_LIMIT = 15
SCAN_DIMENSION_LIMIT = 20
GROUPED_DIMENSION_LIMIT = 12
SCAN_AGREEMENT_RTOL = 1e-6


@dataclass(frozen=True)
class PolynomialSpec:
    """A monomial ``prod_i x_i`` or a binomial
    ``prod_{S1 u S2} x_i + prod_{S2 u S3} x_j`` over equal parts."""

    kind: str
    d: int
    partition: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] | None = None

    def __post_init__(self):
        if self.kind == "monomial":
            if self.d < 1:
                raise ValueError("monomial dimension must be >= 1")
            if self.partition is not None:
                raise ValueError("monomials carry no partition")
        elif self.kind == "binomial":
            if self.d < 3 or self.d % 3 != 0:
                raise ValueError("binomial dimension must be a positive multiple of 3")
            if self.partition is None:
                raise ValueError("binomials need a three-part partition")
            parts = tuple(tuple(sorted(p)) for p in self.partition)
            sizes = {len(p) for p in parts}
            flat = sorted(i for p in parts for i in p)
            if sizes != {self.d // 3} or flat != list(range(self.d)):
                raise ValueError(
                    "partition must split all features into three equal parts"
                )
            object.__setattr__(self, "partition", parts)
        else:
            raise ValueError(f"kind must be 'monomial' or 'binomial', got {self.kind!r}")

    @classmethod
    def monomial(cls, d: int) -> "PolynomialSpec":
        return cls(kind="monomial", d=d)

    @classmethod
    def binomial(cls, d: int) -> "PolynomialSpec":
        """Equal thirds by feature index."""
        m = d // 3
        return cls(
            kind="binomial",
            d=d,
            partition=(
                tuple(range(m)),
                tuple(range(m, 2 * m)),
                tuple(range(2 * m, 3 * m)),
            ),
        )

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"input must have length {self.d}")
        if self.kind == "monomial":
            return float(np.prod(x))
        s1, s2, s3 = self.partition
        first = np.prod(x[list(s1 + s2)])
        second = np.prod(x[list(s2 + s3)])
        return float(first + second)


@dataclass(frozen=True)
class L1Program:
    """0/1 membership rows with one target per row.

    Programs produced by :func:`build_program` enumerate the full powerset
    (row i is subset i under binary counting with bit j = feature j), but
    the solver accepts any 0/1 system.
    """

    coefficients: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if coefficients.ndim != 2 or targets.shape != (coefficients.shape[0],):
            raise ValueError("coefficient rows must align with targets")
        if not np.all(np.isin(coefficients, (0.0, 1.0))):
            raise ValueError("coefficient entries must be 0 or 1")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "targets", targets)

    @property
    def d(self) -> int:
        return self.coefficients.shape[1]


def _powerset_matrix(d: int) -> np.ndarray:
    # Binary counting with bit i = feature i keeps programs byte-reproducible.
    rows = np.arange(1 << d, dtype=np.uint32)
    return ((rows[:, None] >> np.arange(d)) & 1).astype(np.float64)


def build_program(spec: PolynomialSpec, kind: str) -> L1Program:
    """L1 program whose optimum is the least total deletion or insertion
    error any per-feature attribution can achieve on ``spec``.

    Targets are the exact output changes at the all-ones input: for
    deletion ``f(1) - f(1 with S zeroed)``, for insertion
    ``f(S kept) - f(0)``.  A monomial's deletion target is therefore 1 for
    every non-empty subset and 0 for the empty one; a binomial's insertion
    target is ``1[S1 u S2 in S] + 1[S2 u S3 in S]``.
    """
    if kind not in ("deletion", "insertion"):
        raise ValueError(f"kind must be 'deletion' or 'insertion', got {kind!r}")
    if spec.d > LP_DIMENSION_LIMIT:
        raise ValueError(
            f"powerset programs are capped at d={LP_DIMENSION_LIMIT}, got {spec.d}"
        )
    members = _powerset_matrix(spec.d)
    ones = np.ones(spec.d)
    full = spec.evaluate(ones)
    targets = np.empty(members.shape[0])
    for i, row in enumerate(members):
        if kind == "deletion":
            targets[i] = full - spec.evaluate(ones * (1.0 - row))
        else:
            targets[i] = spec.evaluate(row)
    return L1Program(coefficients=members, targets=targets)


def solve_l1(program: L1Program) -> tuple[np.ndarray, float]:
    """Minimize ``sum |targets - coefficients @ alpha|`` over alpha.

    Uses the standard lift with one slack per row (``t >= residual``,
    ``t >= -residual``, minimize ``sum t``) solved by HiGHS.  Returns the
    minimizer and the optimum.
    """
    M = sparse.csr_matrix(program.coefficients)
    n, d = M.shape
    eye = sparse.identity(n, format="csr")
    a_ub = sparse.vstack(
        [sparse.hstack([M, -eye]), sparse.hstack([-M, -eye])], format="csr"
    )
    b_ub = np.concatenate([program.targets, -program.targets])
    objective = np.concatenate([np.zeros(d), np.ones(n)])
    result = linprog(
        objective,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(None, None)] * d + [(0, None)] * n,
        method="highs",
    )
    if result.status != 0:
        raise RuntimeError(
            f"LP solve failed with status {result.status}: {result.message}"
        )
    return result.x[:d], float(result.fun)


def monomial_scan_minimum(d: int) -> float:
    """Exact minimum total deletion error for a monomial via the symmetric
    one-dimensional reduction.

    The objective is convex and permutation-symmetric, so a uniform
    attribution ``alpha = a * ones`` attains the optimum; the reduced
    objective ``sum_k C(d,k) |1 - k a|`` is piecewise linear in ``a`` with
    kinks at ``a = 1/k``, so scanning the kinks (plus 0) is exact.
    """
    if not 1 <= d <= SCAN_DIMENSION_LIMIT:
        raise ValueError(f"scan supports 1 <= d <= {SCAN_DIMENSION_LIMIT}, got {d}")
    candidates = [0.0] + [1.0 / k for k in range(1, d + 1)]
    return min(
        sum(comb(d, k) * abs(1.0 - k * a) for k in range(1, d + 1))
        for a in candidates
    )


def min_deletion_error_monomial(d: int) -> float:
    """Least total powerset deletion error for the d-variable monomial.

    Solves the LP for d up to the program cap and cross-checks it against
    the exact scan; beyond the cap (up to the scan limit) the scan value is
    returned directly.
    """
    if d < 2:
        raise ValueError("monomial certificates start at d=2")
    scan = monomial_scan_minimum(d)
    if d <= LP_DIMENSION_LIMIT:
        _, value = solve_l1(build_program(PolynomialSpec.monomial(d), "deletion"))
        if abs(value - scan) > SCAN_AGREEMENT_RTOL * max(1.0, scan):
            raise RuntimeError(
                f"LP optimum {value} disagrees with the symmetric scan {scan} at d={d}"
            )
        return value
    return scan


def min_insertion_error_binomial(d: int) -> float:
    """Least total powerset insertion error for the equal-thirds binomial."""
    spec = PolynomialSpec.binomial(d)
    _, value = solve_l1(build_program(spec, "insertion"))
    return value


def verify_lemma_monomial_insertion(d: int, x=None) -> float:
    """Total powerset insertion error of the zero attribution on a monomial.

    At the all-ones input only the full subset errs (by exactly 1); at any
    input with a zero feature every subset has zero model output, so the
    total is 0.  Evaluated exhaustively.
    """
    if not 1 <= d <= SCAN_DIMENSION_LIMIT:
        raise ValueError(f"supported range is 1 <= d <= {SCAN_DIMENSION_LIMIT}, got {d}")
    spec = PolynomialSpec.monomial(d)
    x = np.ones(d) if x is None else np.asarray(x, dtype=np.float64)
    return total_powerset_error(spec.evaluate, x, np.zeros(d), "insertion")


def verify_corollary_grouped(spec: PolynomialSpec) -> tuple[float, float]:
    """Exhaustive grouped-error maxima for the zero-error constructions.

    For a monomial the single group (all features, score 1) and for a
    binomial the two groups (each product's support, score 1 each) are
    evaluated against every subset of the powerset at the all-ones input.
    Returns ``(max grouped deletion error, max grouped insertion error)``,
    both expected to be exactly 0.
    """
    if spec.d > GROUPED_DIMENSION_LIMIT:
        raise ValueError(
            f"grouped verification is capped at d={GROUPED_DIMENSION_LIMIT}, got {spec.d}"
        )
    if spec.kind == "monomial":
        groups = np.ones((1, spec.d))
        scores = np.ones(1)
    else:
        s1, s2, s3 = spec.partition
        groups = np.zeros((2, spec.d))
        groups[0, list(s1 + s2)] = 1.0
        groups[1, list(s2 + s3)] = 1.0
        scores = np.ones(2)
    x = np.ones(spec.d)
    max_del = 0.0
    max_ins = 0.0
    for bits in range(1 << spec.d):
        subset = [i for i in range(spec.d) if bits >> i & 1]
        max_del = max(
            max_del, grouped_deletion_error(spec.evaluate, x, groups, scores, subset)
        )
        max_ins = max(
            max_ins, grouped_insertion_error(spec.evaluate, x, groups, scores, subset)
        )
    return max_del, max_ins


@dataclass(frozen=True)
class ExponentialFit:
    """Least-squares fit of ``value = exp(slope * d + intercept) + offset``."""

    slope: float
    intercept: float
    offset: float
    relative_abs_error: float

    def __post_init__(self):
        if self.relative_abs_error < 0:
            raise ValueError("fit error cannot be negative")

    def predict(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return np.exp(self.slope * d + self.intercept) + self.offset


def _log_linear_fit(ds: np.ndarray, values: np.ndarray, offset: float) -> ExponentialFit:
    shifted = values - offset
    slope, intercept = np.polyfit(ds, np.log(shifted), 1)
    fitted = np.exp(slope * ds + intercept) + offset
    rae = float(np.mean(np.abs(fitted - values) / np.abs(values)))
    return ExponentialFit(
        slope=float(slope), intercept=float(intercept), offset=offset,
        relative_abs_error=rae,
    )


def fit_exponential(points: Sequence[tuple[float, float]],
                    with_offset: bool = False) -> ExponentialFit:
    """Fit an exponential of the dimension to (d, value) points.

    Least squares on ``(d, log(value - offset))``; with ``with_offset`` the
    additive offset is grid-searched over [0, min value) at resolution 0.01
    and the grid point with the smallest relative absolute error wins.
    """
    if len(points) < 3:
        raise ValueError("need at least three points to fit")
    ds = np.array([p[0] for p in points], dtype=np.float64)
    values = np.array([p[1] for p in points], dtype=np.float64)
    if not with_offset:
        if values.min() <= 0:
            raise ValueError("values must be positive for a log-linear fit")
        return _log_linear_fit(ds, values, 0.0)
    best: ExponentialFit | None = None
    for offset in np.arange(0.0, values.min(), 0.01):
        candidate = _log_linear_fit(ds, values, float(offset))
        if best is None or candidate.relative_abs_error < best.relative_abs_error:
            best = candidate
    if best is None:
        raise ValueError("values must exceed at least one offset candidate")
    return best
