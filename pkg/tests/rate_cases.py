"""Random rate problems shared by the rate tests and the acceptance suite."""

import numpy as np

from hqp.rates import RateProblem


def random_cycle_flow(d, rng, cycles=3):
    """Nonnegative Eulerian flow built from random directed cycles."""
    f = np.zeros((d, d))
    for _ in range(cycles):
        k = rng.integers(2, d + 1)
        verts = rng.choice(d, size=k, replace=False)
        amt = rng.uniform(0.2, 2.0)
        for a, b in zip(verts, np.roll(verts, -1)):
            f[a, b] += amt
    return f


def random_problem(rng, balanced=None):
    """A rate problem with ``E`` = support of ``mu`` and ``nu' = 0``; ``mu`` a flow when ``balanced``."""
    d = int(rng.integers(2, 5))
    if balanced is None:
        balanced = bool(rng.random() < 0.5)
    if balanced:
        mu = random_cycle_flow(d, rng)
    else:
        mu = random_cycle_flow(d, rng) + np.where(rng.random((d, d)) < 0.4,
                                                  rng.uniform(0.1, 1.0, (d, d)), 0.0)
        np.fill_diagonal(mu, 0.0)
        if mu.sum() == 0:
            mu[0, 1] = 1.0
    alpha = float(rng.uniform(0.1, 0.9))
    return RateProblem.from_support(mu, alpha)


def random_boxed_problem(rng):
    """``mu`` with a designated large set ``E`` and a few small complement cells."""
    d = int(rng.integers(2, 5))
    mu = random_cycle_flow(d, rng) * rng.uniform(2, 6)
    E = mu > 0
    small = (rng.random((d, d)) < 0.35) & ~E & ~np.eye(d, dtype=bool)
    mu = mu + np.where(small, rng.uniform(0.2, 1.5, (d, d)), 0.0)
    if rng.random() < 0.5:
        # perturb E masses so the ray is no longer balanced
        mu = np.where(E, mu * rng.uniform(0.6, 1.6, (d, d)), mu)
    return mu, E, float(rng.uniform(0.15, 0.85))
