"""Finite-n checks of how collision probabilities decay along a ray ``mu = n w``.

If ``w`` is an Eulerian flow, ``q(n w)`` decays polynomially with exponent
``-(d - ncc) / 2`` where ``ncc`` counts the components of the support graph
(isolated vertices included).  Otherwise it decays exponentially at rate
``theta(w)``.  The routines here compute exact ``q`` on a grid of ``n`` and
compare fitted exponents with those predictions.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collision import collision_prob_dp
from .core import in_flow_space, off_diagonal_mask
from .flows import FlowGraph, forest_polynomial
from .rates import theta_bounds, theta_of_w

POLY_TOL = 0.05
EXP_RTOL = 0.05
BAND = 10.0


def _offdiag(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.where(off_diagonal_mask(w.shape[0]), w, 0.0)


def support_components(w) -> int:
    return FlowGraph.from_support(_offdiag(w)).ncc


@dataclass
class ScalingExperiment:
    w: np.ndarray
    n_grid: list
    alpha: float
    regime: str | None = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        d = self.w.shape[0]
        if self.w.shape != (d, d) or np.any(self.w < 0):
            raise ValueError("w must be a nonnegative square matrix")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.n_grid = sorted(int(n) for n in self.n_grid)
        if len(self.n_grid) < 2 or self.n_grid[0] < 1:
            raise ValueError("need at least two positive grid points")
        declared = "polynomial" if in_flow_space(_offdiag(self.w)) else "exponential"
        if self.regime is None:
            self.regime = declared
        elif self.regime != declared:
            raise ValueError(f"regime {self.regime!r} contradicts w (which is {declared})")

    @property
    def d(self) -> int:
        return self.w.shape[0]


def integer_overlap(w, n: int, log: list | None = None) -> np.ndarray:
    """Round ``n w`` half-to-even per entry; if ``w`` is a flow, repair any imbalance this creates.

    The repair walks vertices ``0..d-2`` and moves each residual imbalance
    onto the pair of cells linking that vertex with the last one.  Each
    repair is appended to ``log`` as ``(n, r, amount)``.
    """
    w = np.asarray(w, dtype=float)
    mu = np.rint(n * w).astype(np.int64)
    if not in_flow_space(_offdiag(w)):
        return mu
    d = w.shape[0]
    off = mu * (1 - np.eye(d, dtype=np.int64))
    last = d - 1
    for r in range(d - 1):
        b = int(off[r].sum() - off[:, r].sum())
        if b == 0:
            continue
        if off[r, last] - b >= 0:
            off[r, last] -= b
        else:
            off[last, r] += b
        if log is not None:
            log.append((n, r, b))
    return off + np.diag(np.diag(mu))


@dataclass
class GridPoint:
    n: int
    mu: np.ndarray
    q: float

    @property
    def ln_q(self) -> float:
        return math.log(self.q) if self.q > 0 else -math.inf


def _q_at(args):
    mu, alpha = args
    return collision_prob_dp(mu, alpha)


def evaluate_grid(exp: ScalingExperiment, workers: int = 1, repairs: list | None = None) -> list[GridPoint]:
    mus = [integer_overlap(exp.w, n, repairs) for n in exp.n_grid]
    jobs = [(mu, exp.alpha) for mu in mus]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            qs = list(ex.map(_q_at, jobs))
    else:
        qs = [_q_at(j) for j in jobs]
    return [GridPoint(n, mu, q) for n, mu, q in zip(exp.n_grid, mus, qs)]


def _tail(points: list[GridPoint]) -> list[GridPoint]:
    """Last half of the grid (at least two points)."""
    k = max(2, (len(points) + 1) // 2)
    return points[-k:]


@dataclass
class PolynomialFit:
    slope: float
    target: float
    passed: bool
    points: list = field(default_factory=list)


def verify_polynomial_rate(exp: ScalingExperiment, tol: float = POLY_TOL, workers: int = 1) -> PolynomialFit:
    """OLS slope of ``ln q`` on ``ln n`` over the last half of the grid, against ``-(d - ncc)/2``."""
    pts = evaluate_grid(exp, workers)
    tail = _tail(pts)
    x = np.log([p.n for p in tail])
    y = np.array([p.ln_q for p in tail])
    slope = float(np.polyfit(x, y, 1)[0])
    target = -(exp.d - support_components(exp.w)) / 2.0
    ok = exp.regime == "polynomial" and abs(slope - target) <= tol
    return PolynomialFit(slope, target, ok, pts)


@dataclass
class ExponentialFit:
    rate: float
    theta: float
    passed: bool
    points: list = field(default_factory=list)


def verify_exponential_rate(exp: ScalingExperiment, rtol: float = EXP_RTOL, workers: int = 1) -> ExponentialFit:
    """Fit ``ln q(n w) = a n + b ln n + c`` by least squares; ``a`` should match ``-theta(w)``.

    The ``ln n`` term absorbs the polynomial prefactor so that the linear
    coefficient extrapolates the limit of ``ln q / n``.
    """
    pts = evaluate_grid(exp, workers)
    n = np.array([p.n for p in pts], dtype=float)
    y = np.array([p.ln_q for p in pts])
    A = np.c_[n, np.log(n), np.ones_like(n)]
    rate = float(np.linalg.lstsq(A, y, rcond=None)[0][0])
    theta = theta_of_w(_offdiag(exp.w), exp.alpha)
    ok = (exp.regime == "exponential" and theta > 0
          and abs(rate + theta) <= rtol * theta)
    return ExponentialFit(rate, theta, ok, pts)


@dataclass
class BracketingReport:
    passed: bool
    n: list
    log_q: list
    theta_u: list
    theta_l: list
    log_forest: list
    log_ratio_u: list
    log_ratio_l: list


def verify_bracketing(w, E, alpha: float, n_grid, fixed=None, band: float = BAND) -> BracketingReport:
    """Stability of ``q sqrt(P_G) e^theta`` along ``mu_n = round(n w)`` on ``E``.

    Cells outside ``E`` hold the constant integers ``fixed`` (default 0).  At
    every grid point the exact ``q``, both rate bounds and the forest
    polynomial of the ``E``-graph at weights ``mu_n`` are computed.  The two
    log-ratios ``ln q + ln(P_G)/2 + theta_{u,l}`` must stay within
    ``ln(band)`` of their value at the smallest ``n``.
    """
    w = np.asarray(w, dtype=float)
    d = w.shape[0]
    E = np.asarray(E, dtype=bool) & off_diagonal_mask(d)
    fixed = np.zeros((d, d), dtype=np.int64) if fixed is None else np.asarray(fixed, dtype=np.int64)
    graph = FlowGraph(d, tuple((int(r), int(s)) for r, s in zip(*np.nonzero(E))))
    rep = BracketingReport(True, [], [], [], [], [], [], [])
    for n in sorted(int(v) for v in n_grid):
        mu = np.where(E, np.rint(n * w), np.where(off_diagonal_mask(d), fixed, 0)).astype(np.int64)
        if np.any(mu[E] < 1):
            raise ValueError(f"an E cell rounds to zero at n={n}")
        lq = math.log(collision_prob_dp(mu, alpha))
        tu, tl = theta_bounds(mu, E, alpha)
        lp = math.log(forest_polynomial(graph, mu.astype(float)).value)
        rep.n.append(n)
        rep.log_q.append(lq)
        rep.theta_u.append(tu)
        rep.theta_l.append(tl)
        rep.log_forest.append(lp)
        rep.log_ratio_u.append(lq + 0.5 * lp + tu)
        rep.log_ratio_l.append(lq + 0.5 * lp + tl)
    lb = math.log(band)
    for series in (rep.log_ratio_u, rep.log_ratio_l):
        if any(not math.isfinite(v) for v in series):
            rep.passed = False
            continue
        ref = series[0]
        if any(abs(v - ref) > lb for v in series):
            rep.passed = False
    return rep


def write_grid_csv(path, exp: ScalingExperiment, points: list[GridPoint]) -> None:
    """Rows of ``n, q, ln_q, ln_q_per_n, corrected`` with ``corrected = ln q + n theta + ln(P_G(n w))/2``."""
    theta = theta_of_w(_offdiag(exp.w), exp.alpha)
    graph = FlowGraph.from_support(_offdiag(exp.w))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["n", "q", "ln_q", "ln_q_per_n", "corrected"])
        for p in points:
            lp = math.log(forest_polynomial(graph, p.mu.astype(float)).value)
            out.writerow([p.n, f"{p.q:.12g}", f"{p.ln_q:.12g}", f"{p.ln_q / p.n:.12g}",
                          f"{p.ln_q + p.n * theta + 0.5 * lp:.12g}"])
