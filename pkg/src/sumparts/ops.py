"""Dense numeric primitives: sparsemax, softmax, attention weights, and a
finite-difference gradient oracle.

All functions are pure and operate on float64 numpy arrays.  Inputs are
validated at the boundary (shape, finiteness) and raise ``ValueError`` on
contract violations.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "sparsemax",
    "sparsemax_vjp",
    "softmax",
    "attention_weights",
    "finite_diff_grad",
]


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def sparsemax(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex.

    Uses the O(n log n) sort-and-threshold algorithm: with ``u`` the entries
    of ``v`` sorted descending, the support size is the largest ``k`` with
    ``u_k > (sum(u_1..u_k) - 1) / k``, the threshold ``tau`` is
    ``(sum over the support - 1) / k``, and the output is
    ``max(v - tau, 0)``.  Unlike softmax, entries outside the support are
    exactly zero.

    Returns a vector of the same length with entries in [0, 1] summing to 1.
    """
    v = _as_vector(v, "v")
    if v.size == 1:
        return np.ones(1)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    support = u - cssv / ind > 0
    k = int(np.count_nonzero(support))
    tau = cssv[k - 1] / k
    out = np.clip(v - tau, 0.0, 1.0)
    return out


def sparsemax_vjp(v, upstream) -> np.ndarray:
    """Apply the transposed sparsemax Jacobian at ``v`` to ``upstream``.

    On the support set Q of ``sparsemax(v)`` the Jacobian is
    ``I_Q - (1/|Q|) 11^T`` and zero elsewhere, so the product subtracts the
    support mean from the support entries of ``upstream`` and zeroes the
    rest.  At points where the support set changes the projection is not
    differentiable; the Jacobian of the current support (a valid generalized
    Jacobian) is used.
    """
    v = _as_vector(v, "v")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != v.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match v shape {v.shape}"
        )
    support = sparsemax(v) > 0
    out = np.zeros_like(v)
    masked = upstream[support]
    out[support] = masked - masked.mean()
    return out


def softmax(v) -> np.ndarray:
    """Numerically stable softmax (max-shifted before exponentiation).

    Output entries are strictly positive and sum to 1; the result is
    invariant to adding a constant to every entry.
    """
    v = _as_vector(v, "v")
    shifted = np.exp(v - v.max())
    return shifted / shifted.sum()


_ROW_MODES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "softmax": softmax,
    "sparsemax": sparsemax,
}


def attention_weights(queries, keys, scale: float, mode: str) -> np.ndarray:
    """Scaled dot-product attention weights without the value projection.

    ``queries`` is m-by-p, ``keys`` is n-by-p; the result is the m-by-n
    matrix whose row i is ``mode(queries_i . keys^T / scale)``, so every row
    lies on the probability simplex.  ``mode`` is ``"softmax"`` or
    ``"sparsemax"``.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(
            f"inner dimensions differ: queries {queries.shape}, keys {keys.shape}"
        )
    if not (np.isfinite(scale) and scale > 0):
        raise ValueError(f"scale must be a positive real, got {scale}")
    if mode not in _ROW_MODES:
        raise ValueError(f"mode must be one of {sorted(_ROW_MODES)}, got {mode!r}")
    row_fn = _ROW_MODES[mode]
    scores = queries @ keys.T / scale
    return np.vstack([row_fn(row) for row in scores])


def finite_diff_grad(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, used as a test oracle.

    Evaluates ``(f(x + step*e_i) - f(x - step*e_i)) / (2*step)`` per
    coordinate.  Raises if ``f`` returns a non-finite value at any probe.
    """
    x = np.array(x, dtype=np.float64)  # private copy; probed in place below
    if not (np.isfinite(step) and step > 0):
        raise ValueError(f"step must be a positive real, got {step}")
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"f evaluated to a non-finite value near coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad
