"""Query-rate thresholds, annealed free energy and exact first-moment quantities.

Rates are in units of ``n / ln n`` queries.  For a proportion vector ``pi``
sorted decreasingly, the ``k``-block merge ``pi^(k)`` lumps the ``d - k + 1``
largest masses into one block and keeps the ``k - 1`` smallest as singletons;
it is the coarsening into ``k`` blocks of least entropy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .collision import collision_prob_dp
from .core import MAX_ENUM_D, GuardExceeded, as_proportions, shannon_entropy
from .instance import InstanceParams, planted_counts

ENUM_GUARD = 10_000_000
TIE_RTOL = 1e-12


def merged_distribution(pi, k: int) -> np.ndarray:
    """``k``-block merge: top ``d - k + 1`` masses summed, then the ``k - 1`` smallest (descending)."""
    p = as_proportions(pi)
    d = p.size
    if not 1 <= k <= d - 1:
        raise ValueError(f"k must lie in 1..{d - 1}, got {k}")
    s = np.sort(p)[::-1]
    return np.r_[s[: d - k + 1].sum(), s[d - k + 1:]]


@dataclass
class ThresholdReport:
    gamma_low: float
    gamma_up: float
    argmax_k: int
    pi_k_list: list = field(default_factory=list)
    branch_values: list = field(default_factory=list)


def _argmax_smallest(values) -> int:
    """Index of the maximum; later entries must beat the incumbent by a relative margin to win."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best] + TIE_RTOL * max(1.0, abs(values[best])):
            best = i
    return best


def thresholds(pi) -> ThresholdReport:
    """``gamma_low = H / (d-1)`` and ``gamma_up = 2 max_k (H - H(pi^(k))) / (d - k)``; ties go to the smallest ``k``."""
    p = as_proportions(pi)
    d = p.size
    H = shannon_entropy(p)
    merged = [merged_distribution(p, k) for k in range(1, d)]
    vals = [2.0 * (H - shannon_entropy(m)) / (d - k) for k, m in zip(range(1, d), merged)]
    i = _argmax_smallest(vals)
    return ThresholdReport(H / (d - 1), vals[i], i + 1, merged, vals)


def free_energy_branches(pi, gamma: float) -> list[float]:
    p = as_proportions(pi)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    d = p.size
    H = shannon_entropy(p)
    return [H - shannon_entropy(merged_distribution(p, k)) - 0.5 * gamma * (d - k)
            for k in range(1, d)]


def free_energy(pi, gamma: float) -> float:
    """Annealed free energy ``max_k {H - H(pi^(k)) - gamma (d - k) / 2}``."""
    return max(free_energy_branches(pi, gamma))


# ---------------------------------------------------------------- partitions

def _block_entropy(p: np.ndarray, groups) -> float:
    return shannon_entropy(np.array([p[list(g)].sum() for g in groups]))


def _partition_matrix(groups, d: int) -> np.ndarray:
    X = np.zeros((len(groups), d), dtype=np.int64)
    for b, g in enumerate(groups):
        X[b, list(g)] = 1
    return X


def greedy_partition(pi, k: int, start=None):
    """Run the block-improvement procedure from a starting ``k``-partition.

    Blocks are laid out by decreasing weight.  Working from the rightmost
    unfinished block, its heaviest element is moved into the leftmost block
    until one element remains; that element is then exchanged with the
    lightest element anywhere to its left, if strictly lighter, and the block
    is finished.  Equal masses are never exchanged, so ties leave the
    partition as it stands (the entropy is the same either way).

    ``start`` is a list of ``k`` index collections; by default indices are
    dealt round-robin.  Returns the final blocks, left to right.
    """
    p = as_proportions(pi)
    d = p.size
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in 1..{d}, got {k}")
    if start is None:
        start = [list(range(b, d, k)) for b in range(k)]
    groups = [sorted(int(i) for i in g) for g in start]
    if len(groups) != k or any(not g for g in groups) or sorted(sum(groups, [])) != list(range(d)):
        raise ValueError("start must be a partition of 0..d-1 into k non-empty blocks")
    groups.sort(key=lambda g: -p[g].sum())
    for j in range(k - 1, 0, -1):
        g = groups[j]
        while len(g) > 1:
            heavy = max(g, key=lambda i: (p[i], -i))
            g.remove(heavy)
            groups[0].append(heavy)
        only = g[0]
        left = [(b, i) for b in range(j) for i in groups[b]]
        b, light = min(left, key=lambda bi: (p[bi[1]], bi[1]))
        if p[light] < p[only]:
            groups[b].remove(light)
            groups[b].append(only)
            groups[j] = [light]
    return [sorted(g) for g in groups]


def min_partition_entropy(pi, k: int, start=None):
    """Least entropy of a ``k``-block coarsening of ``pi`` and the partition matrix achieving it.

    The value comes from :func:`greedy_partition` and is checked against the
    closed-form merge ``H(pi^(k))``.
    """
    p = as_proportions(pi)
    d = p.size
    groups = greedy_partition(p, k, start)
    value = _block_entropy(p, groups)
    target = 0.0 if k == 1 else (shannon_entropy(p) if k == d
                                 else shannon_entropy(merged_distribution(p, k)))
    if abs(value - target) > 1e-12:
        raise AssertionError(f"greedy value {value} differs from merged value {target}")
    return value, _partition_matrix(groups, d)


@lru_cache(maxsize=None)
def set_partition_labels(d: int, k: int) -> np.ndarray:
    """Every partition of ``d`` items into exactly ``k`` blocks, as restricted-growth label rows."""
    if d > MAX_ENUM_D:
        raise GuardExceeded(f"set partitions limited to d <= {MAX_ENUM_D}")
    rows = []

    def grow(prefix, used):
        i = len(prefix)
        if i == d:
            if used == k:
                rows.append(prefix.copy())
            return
        if used + (d - i) < k:
            return
        for b in range(min(used + 1, k)):
            prefix.append(b)
            grow(prefix, max(used, b + 1))
            prefix.pop()

    grow([], 0)
    return np.array(rows, dtype=np.int64).reshape(-1, d)


def min_partition_entropy_brute(pi, k: int) -> float:
    """Minimum block entropy over all ``k``-block set partitions (exhaustive)."""
    p = as_proportions(pi)
    labels = set_partition_labels(p.size, k)
    masses = np.zeros((labels.shape[0], k))
    np.add.at(masses, (np.repeat(np.arange(labels.shape[0]), p.size), labels.ravel()),
              np.tile(p, labels.shape[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(masses > 0, masses * np.log(masses), 0.0).sum(axis=1)
    return float(ent.min())


# ---------------------------------------------------------------- finite n

def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 1 - prev - 1)
        yield out


def count_overlaps(n: int, pi) -> int:
    """Number of ``d x d`` nonnegative integer arrays with column sums ``n pi``."""
    counts = planted_counts(n, pi)
    d = counts.size
    return math.prod(math.comb(int(c) + d - 1, d - 1) for c in counts)


def enumerate_overlaps(n: int, pi, guard: int = ENUM_GUARD):
    """Yield every non-diagonal overlap array with column sums ``n pi``.

    Column by column, each column running over its compositions in
    lexicographic order.
    """
    counts = planted_counts(n, pi)
    d = counts.size
    total = count_overlaps(n, pi)
    if total > guard:
        raise GuardExceeded(f"{total} overlap arrays exceed the enumeration guard {guard}")
    cols = [list(_compositions(int(c), d)) for c in counts]
    diag = np.diag(counts)
    for choice in itertools.product(*cols):
        mu = np.array(choice, dtype=np.int64).T
        if not np.array_equal(mu, diag):
            yield mu


def _log_multinomial(n: int, parts) -> float:
    parts = np.asarray(parts, dtype=float).ravel()
    return float(gammaln(n + 1) - gammaln(parts + 1).sum())


class _QCache:
    def __init__(self, alpha: float):
        self.alpha = alpha
        self.store: dict = {}

    def __call__(self, mu: np.ndarray) -> float:
        off = mu * (1 - np.eye(mu.shape[0], dtype=np.int64))
        key = off.tobytes()
        if key not in self.store:
            self.store[key] = collision_prob_dp(off, self.alpha)
        return self.store[key]


def expected_excess(n: int, pi, alpha: float, m: float, guard: int = ENUM_GUARD,
                    balanced_only: bool = False) -> float:
    """``E[Z - 1]`` for real-valued ``m``: multinomial-weighted sum of ``q(mu)^m`` over non-diagonal overlaps.

    With ``balanced_only`` the sum keeps only overlaps whose row sums equal
    their column sums, i.e. competitors of the same type as the planted
    assignment.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    counts = planted_counts(n, pi)
    q = _QCache(alpha)
    log_norm = _log_multinomial(n, counts)
    terms = []
    for mu in enumerate_overlaps(n, pi, guard):
        if balanced_only and np.any(mu.sum(axis=1) != counts):
            continue
        qm = q(mu)
        terms.append(math.exp(_log_multinomial(n, mu) - log_norm + m * math.log(qm)))
    return math.fsum(terms)


def expected_excess_solutions(params: InstanceParams, guard: int = ENUM_GUARD) -> float:
    """Exact expected number of non-planted satisfying assignments for ``params``."""
    return expected_excess(params.n, params.pi, params.alpha, params.m, guard)


@dataclass
class FiniteFreeEnergy:
    value: float
    argmax_mu: np.ndarray
    m: float
    off_diagonal_mass: int


def finite_n_free_energy(n: int, pi, gamma: float, alpha: float,
                         guard: int = ENUM_GUARD) -> FiniteFreeEnergy:
    """``max_mu (1/n) ln C(n; mu) + gamma ln q(mu) / ln n`` over non-diagonal overlaps.

    ``m = gamma n / ln n`` is kept real, so no rounding enters.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    q = _QCache(alpha)
    best, best_mu = -math.inf, None
    ln_n = math.log(n)
    for mu in enumerate_overlaps(n, pi, guard):
        val = _log_multinomial(n, mu) / n + gamma * math.log(q(mu)) / ln_n
        if val > best + TIE_RTOL * max(1.0, abs(best)) or best_mu is None:
            best, best_mu = val, mu
    off = int(best_mu.sum() - np.trace(best_mu))
    return FiniteFreeEnergy(best, best_mu, gamma * n / ln_n, off)
