"""Exact solution counting for HQP instances by pruned backtracking.

The count ranges over every assignment in ``{1..d}^n`` (not only the ones
with the planted proportions), which is what the non-uniqueness event
quantifies over.
"""

from __future__ import annotations

import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .instance import Instance, InstanceParams, generate_instance, trial_rng

COUNT_CAP = 2**63 - 1


@dataclass(frozen=True)
class CountResult:
    count: int
    early_exit: bool
    nodes_visited: int
    saturated: bool = False


def _search_order(pools: np.ndarray) -> np.ndarray:
    # most-constrained first; ties by index so the order is deterministic
    membership = pools.sum(axis=0)
    return np.lexsort((np.arange(pools.shape[1]), -membership))


def count_solutions(inst: Instance, limit: int | None = None) -> CountResult:
    """Count assignments reproducing every observed histogram.

    Individuals are assigned in a fixed most-constrained-first order while
    per-query residual histograms and remaining pool sizes are maintained; a
    branch dies as soon as a residual goes negative or exceeds the number of
    still-unassigned members of its pool.  Individuals in no pool are free and
    contribute a factor ``d`` each.  With ``limit`` the search stops once that
    many solutions are known (``early_exit=True`` and ``count=limit``).
    """
    if limit is not None and limit < 1:
        raise ValueError("limit must be >= 1")
    d = inst.params.d
    n = inst.params.n
    pools = inst.pools
    hist = inst.histograms
    m = pools.shape[0]

    sizes = pools.sum(axis=1)
    if m and np.any(hist.sum(axis=1) != sizes):
        return CountResult(0, False, 0)

    order = _search_order(pools) if m else np.arange(n)
    member_of = [tuple(int(a) for a in np.flatnonzero(pools[:, i])) for i in order]
    n_bound = sum(1 for q in member_of if q)
    member_of = member_of[:n_bound]
    free_factor = d ** (n - n_bound)

    res = [int(v) for v in hist.ravel()]
    rem = [int(v) for v in sizes]
    cap = COUNT_CAP if limit is None else min(limit, COUNT_CAP)

    count = 0
    nodes = 0
    stop = False

    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * n + 100))

    def descend(k: int) -> None:
        nonlocal count, nodes, stop
        nodes += 1
        if k == n_bound:
            count += free_factor
            if count >= cap:
                stop = True
            return
        qs = member_of[k]
        for r in range(d):
            ok = True
            for a in qs:
                j = a * d + r
                res[j] -= 1
                rem[a] -= 1
                # sum(res[a]) == rem[a] always holds, so a residual can only
                # exceed rem[a] if another one is negative
                if res[j] < 0:
                    ok = False
            if ok:
                descend(k + 1)
            for a in qs:
                res[a * d + r] += 1
                rem[a] += 1
            if stop:
                return

    descend(0)
    saturated = limit is None and count >= COUNT_CAP
    if count >= cap:
        return CountResult(cap, limit is not None, nodes, saturated)
    return CountResult(count, False, nodes, False)


def count_solutions_naive(inst: Instance) -> int:
    """Brute-force count over all ``d^n`` assignments (vectorised, small n only)."""
    d, n = inst.params.d, inst.params.n
    if d**n > 2**22:
        raise ValueError("naive enumeration is limited to d^n <= 2^22")
    if inst.m == 0:
        return d**n
    labels = np.array(list(itertools.product(range(d), repeat=n)), dtype=np.int64)
    onehot = np.eye(d, dtype=np.int64)[labels]  # (d^n, n, d)
    hists = np.einsum("an,tnr->tar", inst.pools.astype(np.int64), onehot)
    return int(np.all(hists == inst.histograms[None], axis=(1, 2)).sum())


def uniqueness_event(inst: Instance) -> bool:
    """True iff some assignment other than the planted one satisfies every query."""
    return count_solutions(inst, limit=2).count >= 2


def _event_block(params: InstanceParams, trials: range, fixed_tau) -> int:
    hits = 0
    for t in trials:
        inst = generate_instance(params, trial_rng(params.seed, t), tau_star=fixed_tau)
        hits += uniqueness_event(inst)
    return hits


def default_workers() -> int:
    env = os.environ.get("HQP_THREADS")
    if env:
        return max(1, int(env))
    return 1


def estimate_prob_E(params: InstanceParams, trials: int, workers: int | None = None,
                    fixed_tau=None) -> tuple[float, float]:
    """Monte Carlo estimate of the non-uniqueness probability and its binomial standard error.

    Trial ``t`` uses the stream ``(params.seed, t)``, so the estimate does not
    depend on ``workers``.  By default the planted assignment is redrawn in
    every trial; pass ``fixed_tau`` to hold it fixed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or trials < 2 * workers:
        hits = _event_block(params, range(trials), fixed_tau)
    else:
        step = math.ceil(trials / workers)
        blocks = [range(s, min(s + step, trials)) for s in range(0, trials, step)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            hits = sum(ex.map(_event_block, [params] * len(blocks), blocks,
                              [fixed_tau] * len(blocks)))
    p = hits / trials
    stderr = math.sqrt(p * (1.0 - p) / trials) if trials > 1 else 0.0
    return p, stderr
