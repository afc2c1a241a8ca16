"""Planted HQP instances: planted assignment, Bernoulli pools and observed histograms.

Randomness comes from numpy's PCG64 generator seeded through
:class:`numpy.random.SeedSequence`.  The stream for trial ``t`` of a run with
master seed ``seed`` is ``SeedSequence(seed, spawn_key=(t,))``, so any trial
can be regenerated on its own, in any process, in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import as_assignment, as_proportions, type_counts


def trial_rng(seed: int, trial: int | None = None) -> np.random.Generator:
    """Generator for ``(seed, trial)``; ``trial=None`` gives the root stream."""
    key = () if trial is None else (int(trial),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def planted_counts(n: int, pi) -> np.ndarray:
    """Type counts ``n * pi``; raises unless every one is an integer."""
    p = as_proportions(pi)
    raw = n * p
    counts = np.rint(raw).astype(np.int64)
    if np.any(np.abs(raw - counts) > 1e-9) or counts.sum() != n:
        raise ValueError(f"n * pi is not integral: n={n}, pi={p}")
    return counts


@dataclass(frozen=True)
class InstanceParams:
    n: int
    d: int
    pi: tuple
    alpha: float
    m: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        p = as_proportions(self.pi)
        if p.size != self.d:
            raise ValueError(f"pi has {p.size} entries but d={self.d}")
        object.__setattr__(self, "pi", tuple(float(v) for v in p))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        planted_counts(self.n, self.pi)

    def with_m(self, m: int) -> "InstanceParams":
        return InstanceParams(self.n, self.d, self.pi, self.alpha, int(m), self.seed)

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "pi": list(self.pi), "alpha": self.alpha,
                "m": self.m, "seed": self.seed}


@dataclass
class Instance:
    params: InstanceParams
    tau_star: np.ndarray
    pools: np.ndarray  # (m, n) bool
    histograms: np.ndarray  # (m, d) int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        self.tau_star = as_assignment(self.tau_star, p.d)
        self.pools = np.asarray(self.pools, dtype=bool).reshape(-1, p.n)
        self.histograms = np.asarray(self.histograms, dtype=np.int64).reshape(-1, p.d)
        if self.tau_star.size != p.n:
            raise ValueError("tau_star has the wrong length")
        if self.pools.shape[0] != self.histograms.shape[0]:
            raise ValueError("one histogram per pool is required")

    @property
    def m(self) -> int:
        return self.pools.shape[0]

    def check(self) -> bool:
        """Re-derive every histogram from ``tau_star`` and the pools."""
        want = np.array([histogram_of(self.tau_star, pool, self.params.d) for pool in self.pools],
                        dtype=np.int64).reshape(-1, self.params.d)
        return bool(np.array_equal(want, self.histograms))

    def prefix(self, m: int) -> "Instance":
        """The same instance restricted to its first ``m`` queries."""
        return Instance(self.params.with_m(m), self.tau_star.copy(), self.pools[:m].copy(),
                        self.histograms[:m].copy())

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "tau_star": [int(v) for v in self.tau_star],
            "pools": [[int(b) for b in row] for row in self.pools],
            "histograms": [[int(c) for c in row] for row in self.histograms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        pr = data["params"]
        params = InstanceParams(int(pr["n"]), int(pr["d"]), tuple(pr["pi"]), float(pr["alpha"]),
                                int(pr["m"]), int(pr.get("seed", 0)))
        m = len(data["pools"])
        return cls(params, np.array(data["tau_star"]),
                   np.array(data["pools"], dtype=bool).reshape(m, params.n),
                   np.array(data["histograms"], dtype=np.int64).reshape(m, params.d))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.params == other.params
                and np.array_equal(self.tau_star, other.tau_star)
                and np.array_equal(self.pools, other.pools)
                and np.array_equal(self.histograms, other.histograms))


def sample_planted_assignment(n: int, pi, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random assignment with exactly ``n * pi[r]`` individuals of type ``r + 1``."""
    counts = planted_counts(n, pi)
    labels = np.repeat(np.arange(1, counts.size + 1, dtype=np.int64), counts)
    return rng.permutation(labels)


def sample_pool(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent Bernoulli(alpha) membership bits."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return rng.random(n) < alpha


def histogram_of(tau, pool, d: int | None = None) -> np.ndarray:
    """Type counts of ``tau`` restricted to the members of ``pool``."""
    t = as_assignment(tau, d)
    pool = np.asarray(pool, dtype=bool)
    if pool.shape != t.shape:
        raise ValueError(f"pool length {pool.size} != assignment length {t.size}")
    if d is None:
        d = int(t.max())
    return np.bincount(t[pool] - 1, minlength=d).astype(np.int64)


def query_count_for_gamma(n: int, gamma: float) -> int:
    """Number of queries ``max(1, round(gamma * n / ln n))``."""
    if n < 2:
        raise ValueError("need n >= 2 for m = gamma n / ln n")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return max(1, int(round(gamma * n / math.log(n))))


def generate_instance(params: InstanceParams, rng: np.random.Generator | None = None,
                      tau_star=None) -> Instance:
    """Draw a planted instance.  Pass ``tau_star`` to keep the planted assignment fixed."""
    if rng is None:
        rng = trial_rng(params.seed)
    if tau_star is None:
        tau_star = sample_planted_assignment(params.n, params.pi, rng)
    else:
        tau_star = as_assignment(tau_star, params.d)
        if not np.array_equal(type_counts(tau_star, params.d), planted_counts(params.n, params.pi)):
            raise ValueError("fixed tau_star is not consistent with pi")
    pools = rng.random((params.m, params.n)) < params.alpha
    hists = np.array([histogram_of(tau_star, pool, params.d) for pool in pools],
                     dtype=np.int64).reshape(params.m, params.d)
    return Instance(params, tau_star, pools, hists)


def write_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(inst.to_dict(), indent=1) + "\n")


def read_instance(path) -> Instance:
    return Instance.from_dict(json.loads(Path(path).read_text()))
