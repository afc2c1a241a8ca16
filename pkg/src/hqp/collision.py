"""Exact collision probability ``q(mu)`` of two assignments with overlap ``mu``.

``q(mu)`` is the probability that a Bernoulli(alpha) pool sees the same
histogram under both assignments.  Writing ``nu[r, s] ~ Binomial(mu[r, s], alpha)``
for the pooled part of each overlap cell, a collision happens exactly when
``nu`` is an Eulerian flow: every vertex has zero net flow
``sum_s nu[r, s] - sum_s nu[s, r]``.  Diagonal cells never move the net flow.

Three routes are provided:

* :func:`collision_prob_dp`: exact dynamic programming over the vector of
  partial net flows (the main engine);
* :func:`collision_prob_dft`: Fourier inversion of the net-flow
  characteristic function on a lattice fine enough to avoid aliasing;
* :func:`collision_prob_mc`: Monte Carlo over random pools of two concrete
  assignments.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .core import GuardExceeded, as_assignment, overlap

MAX_DP_STATES = 20_000_000
MAX_DFT_POINTS = 20_000_000


def _check_query(mu, alpha: float) -> np.ndarray:
    mu = np.asarray(mu)
    if mu.ndim != 2 or mu.shape[0] != mu.shape[1]:
        raise ValueError(f"overlap must be square, got shape {mu.shape}")
    if not np.all(np.equal(np.mod(mu, 1), 0)) or np.any(mu < 0):
        raise ValueError("overlap entries must be nonnegative integers")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return mu.astype(np.int64)


def binomial_pmf(k_max: int, alpha: float) -> np.ndarray:
    """Binomial(k_max, alpha) pmf over ``0..k_max``, evaluated in log space."""
    k = np.arange(k_max + 1)
    logp = (gammaln(k_max + 1) - gammaln(k + 1) - gammaln(k_max - k + 1)
            + k * math.log(alpha) + (k_max - k) * math.log1p(-alpha))
    return np.exp(logp)


def _flow_ranges(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    off = mu * (1 - np.eye(mu.shape[0], dtype=np.int64))
    return -off.sum(axis=0), off.sum(axis=1)  # (lowest, highest) net flow per vertex


def collision_prob_dp(mu, alpha: float, compensated: bool = False,
                      max_states: int = MAX_DP_STATES) -> float:
    """Exact ``q(mu)`` by dynamic programming over partial net flows.

    Off-diagonal cells are processed row-major.  The state is the net flow of
    vertices ``1..d-1`` (vertex ``d`` is determined by conservation) held in a
    dense box covering every reachable value; each cell convolves in its
    binomial law, shifted up at its row vertex and down at its column vertex.
    The answer is the mass left at the all-zero state.

    ``compensated=True`` carries a Kahan correction array through every
    accumulation.
    """
    mu = _check_query(mu, alpha)
    d = mu.shape[0]
    lo, hi = _flow_ranges(mu)
    lo, hi = lo[: d - 1], hi[: d - 1]
    shape = tuple(int(v) for v in (hi - lo + 1))
    n_states = int(np.prod(shape, dtype=np.float64)) if shape else 1
    if n_states > max_states:
        raise GuardExceeded(f"net-flow state space of {n_states} cells exceeds {max_states}")

    prob = np.zeros(shape)
    origin = tuple(int(v) for v in -lo)
    prob[origin] = 1.0
    comp = np.zeros(shape) if compensated else None

    for r in range(d):
        for s in range(d):
            k_max = int(mu[r, s])
            if r == s or k_max == 0:
                continue
            pmf = binomial_pmf(k_max, alpha)
            new = np.zeros(shape)
            new_c = np.zeros(shape) if compensated else None
            for k in range(k_max + 1):
                # shift by +k along axis r and -k along axis s (vertex d-1 is implicit)
                src = [slice(None)] * (d - 1)
                dst = [slice(None)] * (d - 1)
                if r < d - 1:
                    src[r] = slice(0, shape[r] - k)
                    dst[r] = slice(k, shape[r])
                if s < d - 1:
                    src[s] = slice(k, shape[s])
                    dst[s] = slice(0, shape[s] - k)
                src, dst = tuple(src), tuple(dst)
                term = pmf[k] * prob[src]
                if compensated:
                    term = term - pmf[k] * comp[src]
                    y = term - new_c[dst]
                    t = new[dst] + y
                    new_c[dst] = (t - new[dst]) - y
                    new[dst] = t
                else:
                    new[dst] += term
            prob = new
            comp = new_c
    value = float(prob[origin] - (comp[origin] if compensated else 0.0))
    return min(max(value, 0.0), 1.0)


def dft_grid_size(mu) -> int:
    """Smallest power of two above twice the widest per-vertex net-flow range."""
    mu = np.asarray(mu, dtype=np.int64)
    lo, hi = _flow_ranges(mu)
    bound = 2 * int(np.max(hi - lo)) if mu.size else 0
    L = 1
    while L <= bound:
        L *= 2
    return L


def _log_mgf(eta_free: np.ndarray, mu: np.ndarray, alpha: float):
    """Log moment generating function of the net flow at tilt ``eta`` (``eta_d = 0``), with gradient."""
    d = mu.shape[0]
    eta = np.append(eta_free, 0.0)
    diff = eta[:, None] - eta[None, :]
    # log(1 - alpha + alpha e^x) computed without overflow
    val = np.logaddexp(math.log1p(-alpha), math.log(alpha) + diff)
    off = mu * (1 - np.eye(d))
    x = np.exp(math.log(alpha) + diff - val)  # tilted inclusion probability
    flow = off * x
    grad = flow.sum(axis=1) - flow.sum(axis=0)
    return float((off * val).sum()), grad[: d - 1]


def saddle_tilt(mu, alpha: float, bound: float = 40.0) -> np.ndarray:
    """Tilt minimising the net-flow moment generating function (``eta_d = 0``).

    When the infimum is approached only at infinity the tilt is clipped to
    ``[-bound, bound]``; any tilt keeps the inversion exact, the saddle merely
    keeps it accurate in relative terms.
    """
    from scipy.optimize import minimize

    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    res = minimize(_log_mgf, np.zeros(d - 1), args=(mu, alpha), jac=True, method="L-BFGS-B",
                   bounds=[(-bound, bound)] * (d - 1), options={"ftol": 1e-15, "gtol": 1e-12})
    return np.append(res.x, 0.0)


def collision_prob_dft(mu, alpha: float, imag_tol: float = 1e-9, tilt: bool = True,
                       max_points: int = MAX_DFT_POINTS) -> float:
    """Exact ``q(mu)`` by averaging the net-flow characteristic function over a lattice.

    ``q = L^-(d-1) * sum_theta prod_(r,s) (1 - alpha + alpha e^{i(theta_r - theta_s)})^mu_rs``
    with ``theta_d = 0`` and each other ``theta_r`` on the ``L``-th roots of
    unity.  ``L`` exceeds every net-flow range, so no aliasing occurs and the
    average picks out exactly the zero-flow mass.

    With ``tilt=True`` the lattice is moved onto the contour through the
    saddle point of the moment generating function (``theta -> theta - i eta``).
    The zero-flow mass is unchanged, but the summands no longer cancel
    catastrophically, so tiny probabilities keep full relative precision.  The
    imaginary-part check is applied relative to the scale factor in that case.
    """
    mu = _check_query(mu, alpha)
    d = mu.shape[0]
    L = dft_grid_size(mu)
    if L ** (d - 1) > max_points:
        raise GuardExceeded(f"DFT grid of {L}^{d - 1} points exceeds {max_points}")
    eta = saddle_tilt(mu, alpha) if tilt else np.zeros(d)
    angles = 2.0 * np.pi * np.arange(L) / L
    grids = np.meshgrid(*([angles] * (d - 1)), indexing="ij")
    theta = list(grids) + [np.zeros_like(grids[0])]
    log_total = np.zeros(theta[0].shape, dtype=complex)
    log_scale = 0.0
    la, l1a = math.log(alpha), math.log1p(-alpha)
    for r in range(d):
        for s in range(d):
            k = int(mu[r, s])
            if r == s or k == 0:
                continue
            shift = eta[r] - eta[s]
            # factor out |1 - alpha + alpha e^{shift}| so every term has modulus <= 1
            norm = np.logaddexp(l1a, la + shift)
            a = math.exp(la + shift - norm)
            factor = (1.0 - a) + a * np.exp(1j * (theta[r] - theta[s]))
            log_total += k * np.log(factor)
            log_scale += k * norm
    value = np.exp(log_total).mean()
    scale = abs(value.real) if tilt else 1.0
    if abs(value.imag) > imag_tol * scale:
        raise ArithmeticError(f"residual imaginary part {value.imag:.3e} in lattice inversion")
    return float(value.real * math.exp(log_scale))


def collision_prob_mc(tau, tau_star, alpha: float, trials: int, rng: np.random.Generator,
                      batch: int = 8192) -> tuple[float, float]:
    """Monte Carlo collision frequency of two assignments over random pools.

    Each sampled pool is tested twice, once by comparing the two histograms
    and once through the per-vertex balance of the pooled overlap cells; the
    two verdicts must agree on every trial.
    """
    t = as_assignment(tau)
    ts = as_assignment(tau_star)
    if t.shape != ts.shape:
        raise ValueError("assignments differ in length")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = int(max(t.max(), ts.max(), 2))
    n = t.size
    oh_t = np.eye(d, dtype=np.int64)[t - 1]
    oh_s = np.eye(d, dtype=np.int64)[ts - 1]
    cell = (t - 1) * d + (ts - 1)
    oh_cell = np.eye(d * d, dtype=np.int64)[cell]
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        pools = (rng.random((b, n)) < alpha).astype(np.int64)
        same_hist = np.all(pools @ oh_t == pools @ oh_s, axis=1)
        nu = (pools @ oh_cell).reshape(b, d, d)
        balanced = np.all(nu.sum(axis=2) == nu.sum(axis=1), axis=1)
        if not np.array_equal(same_hist, balanced):
            raise AssertionError("histogram equality and flow balance disagree on a pool")
        hits += int(same_hist.sum())
        done += b
    p = hits / trials
    return p, math.sqrt(p * (1.0 - p) / trials) if trials > 1 else 0.0


def collision_prob(tau, tau_star, alpha: float) -> float:
    """Exact collision probability of two concrete assignments (via their overlap)."""
    return collision_prob_dp(overlap(tau, tau_star), alpha)
