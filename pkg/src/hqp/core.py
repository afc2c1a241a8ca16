"""Shared primitives: proportion vectors, entropy, Bernoulli KL, flow-space membership, overlaps.

Conventions used across the package:

* logarithms are natural (results in nats);
* type labels of an assignment are the integers ``1..d``;
* every ``d x d`` matrix is indexed from 0, so the overlap entry for the
  label pair ``(r, s)`` sits at ``mu[r - 1, s - 1]``.
"""

from __future__ import annotations

import math

import numpy as np

FLOW_TOL = 1e-10
MAX_ENUM_D = 8


class GuardExceeded(RuntimeError):
    """A computation would exceed a configured resource bound."""


def as_proportions(pi, tol: float = 1e-12) -> np.ndarray:
    """Validate and return ``pi`` as a float array of proportions.

    Entries must lie strictly in (0, 1), there must be at least two of them,
    and they must sum to 1 within ``tol``.
    """
    p = np.asarray(pi, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"proportion vector needs d >= 2 entries, got shape {p.shape}")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError(f"proportions must lie strictly inside (0, 1): {p}")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"proportions sum to {p.sum():.15g}, not 1")
    return p


def as_assignment(types, d: int | None = None) -> np.ndarray:
    """Validate an assignment (labels ``1..d``) and return it as an int64 array."""
    t = np.asarray(types)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("an assignment is a non-empty 1-D sequence of labels")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise ValueError("assignment labels must be integers")
    t = t.astype(np.int64)
    if t.min() < 1 or (d is not None and t.max() > d):
        raise ValueError(f"assignment labels out of range 1..{d}")
    return t


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=float)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def shannon_entropy(p) -> float:
    """Shannon entropy ``-sum p log p`` in nats, with ``0 log 0 = 0``.

    Accepts any nonnegative vector summing to one (a point mass is allowed
    here, the strict ProportionVector checks live in :func:`as_proportions`).
    """
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0):
        raise ValueError("entropy of a vector with negative entries")
    return float(-_xlogx(p).sum())


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence ``D(p || q)`` between Bernoulli(p) and Bernoulli(q), in nats."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def flow_imbalance(x) -> np.ndarray:
    """Per-vertex net flow ``row_sum - col_sum`` of a square array."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    return x.sum(axis=1) - x.sum(axis=0)


def in_flow_space(x, tol: float | None = None) -> bool:
    """True iff every row sum of ``x`` equals the matching column sum.

    Integer arrays are tested exactly; real arrays use ``tol`` (default
    :data:`FLOW_TOL`).
    """
    x = np.asarray(x)
    imb = flow_imbalance(x)
    if np.issubdtype(x.dtype, np.integer) or x.dtype == object:
        if tol is None:
            return bool(np.all(imb == 0))
    if tol is None:
        tol = FLOW_TOL
    return bool(np.max(np.abs(imb)) <= tol)


def overlap(tau, tau_star, d: int | None = None) -> np.ndarray:
    """Overlap matrix ``mu[r-1, s-1] = #{i : tau_i = r, tau*_i = s}``."""
    t = as_assignment(tau)
    ts = as_assignment(tau_star)
    if t.shape != ts.shape:
        raise ValueError(f"assignment lengths differ: {t.size} vs {ts.size}")
    if d is None:
        d = int(max(t.max(), ts.max(), 2))
    if max(t.max(), ts.max()) > d:
        raise ValueError(f"labels exceed d={d}")
    mu = np.zeros((d, d), dtype=np.int64)
    np.add.at(mu, (t - 1, ts - 1), 1)
    return mu


def type_counts(tau, d: int) -> np.ndarray:
    """Number of individuals carrying each label ``1..d``."""
    t = as_assignment(tau, d)
    return np.bincount(t - 1, minlength=d).astype(np.int64)


def off_diagonal_mask(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)
