"""Exponential decay rates of collision probabilities.

For a set ``E`` of "large" off-diagonal cells with masses ``mu`` and fixed
values ``nu'`` on the remaining off-diagonal cells, the rate is the
KL projection

    theta(nu', mu) = min  sum_E mu_rs D(x_rs || alpha)
                     s.t. the matrix (x * mu on E, nu' elsewhere) is an Eulerian flow,
                          x in [0, 1]^E,

computed through its concave dual over vertex potentials ``lam`` (gauge
``lam_d = 0``):

    g(lam) = sum_{not E} nu'_rs (lam_r - lam_s)
             + sum_E mu_rs [t_rs - log(alpha + (1 - alpha) e^{t_rs})],  t_rs = lam_r - lam_s,

whose maximiser gives ``x_rs = alpha / (alpha + (1 - alpha) e^{t_rs})``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .core import GuardExceeded, flow_imbalance, kl_bernoulli, off_diagonal_mask

GRAD_TOL = 1e-10
MAX_ITER = 200
ARMIJO_C = 1e-4
STALL_GAIN = 1e-12
STALL_STEPS = 10
BOUNDARY_EPS = 1e-8
MAX_VERTEX_COORDS = 12


def kappa(alpha: float) -> float:
    """Constant ``1/alpha^2 + 1/(1-alpha)^2`` bounding the potential differences."""
    return 1.0 / alpha**2 + 1.0 / (1.0 - alpha) ** 2


@dataclass
class RateProblem:
    """Cells in ``E`` carry masses ``mu``; off-diagonal cells outside ``E`` carry fixed flows ``nu_fixed``."""

    E: np.ndarray
    mu: np.ndarray
    nu_fixed: np.ndarray
    alpha: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        d = self.mu.shape[0]
        if self.mu.shape != (d, d):
            raise ValueError("mu must be a square matrix")
        self.E = np.asarray(self.E, dtype=bool) & off_diagonal_mask(d)
        self.nu_fixed = np.where(self.complement, np.asarray(self.nu_fixed, dtype=float), 0.0)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if np.any(self.mu[self.E] <= 0):
            raise ValueError("every cell of E needs positive mass")
        if np.any(self.nu_fixed < 0):
            raise ValueError("fixed flows must be nonnegative")

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @property
    def complement(self) -> np.ndarray:
        return off_diagonal_mask(self.d) & ~self.E

    @classmethod
    def from_support(cls, w, alpha: float) -> "RateProblem":
        """``E`` = off-diagonal support of ``w``, no fixed flows."""
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        E = (w > 0) & off_diagonal_mask(w.shape[0])
        return cls(E, w, np.zeros_like(w), alpha)

    def scaled(self, c: float) -> "RateProblem":
        return RateProblem(self.E, c * self.mu, c * self.nu_fixed, self.alpha)


@dataclass
class RateSolution:
    theta: float
    x_star: np.ndarray
    lam: np.ndarray
    converged: bool
    kkt_residual: float
    boundary: bool = False
    iterations: int = 0
    primal_value: float = math.nan
    info: dict = field(default_factory=dict)


def inclusion_probs(lam: np.ndarray, alpha: float) -> np.ndarray:
    """Matrix of ``alpha / (alpha + (1 - alpha) e^{lam_r - lam_s})``."""
    t = lam[:, None] - lam[None, :]
    return expit(math.log(alpha) - math.log1p(-alpha) - t)


class _DualModel:
    """Concave dual in the potentials ``lam``, optionally with softened box cells.

    Cells in ``E`` contribute ``mu f(t)``, fixed cells contribute ``nu t`` and
    soft cells contribute ``-s mu log(1 + e^{-t/s})``, a smooth lower
    approximation of ``mu min(0, t)`` that is off by at most ``s mu ln 2``.
    The flow carried by a soft cell is ``mu / (1 + e^{t/s})``.
    """

    def __init__(self, p: RateProblem, soft_mu=None, temperature: float = 1.0):
        self.p = p
        self.muE = np.where(p.E, p.mu, 0.0)
        self.soft = np.zeros_like(p.mu) if soft_mu is None else soft_mu
        self.s = temperature
        self.la, self.l1a = math.log(p.alpha), math.log1p(-p.alpha)

    def value(self, lam) -> float:
        t = lam[:, None] - lam[None, :]
        f = -np.logaddexp(self.la - t, self.l1a)
        v = (self.p.nu_fixed * t).sum() + (self.muE * f).sum()
        if self.soft.any():
            v -= self.s * (self.soft * np.logaddexp(0.0, -t / self.s)).sum()
        return float(v)

    def grad_hess(self, lam):
        t = lam[:, None] - lam[None, :]
        x = expit(self.la - self.l1a - t)
        flow = self.muE * x + self.p.nu_fixed
        c = self.muE * x * (1.0 - x)
        if self.soft.any():
            y = expit(-t / self.s)
            flow = flow + self.soft * y
            c = c + self.soft * y * (1.0 - y) / self.s
        c = c + c.T
        hess = -(np.diag(c.sum(axis=1)) - c)  # minus a weighted Laplacian
        return flow_imbalance(flow), hess, x


def _ascend(model: _DualModel, lam: np.ndarray, gtol: float, scale: float, max_iter: int):
    """Damped Newton ascent with Armijo backtracking; returns ``(lam, converged, iterations, stalled)``.

    A run of steps whose length does not shrink while the gain stays below
    ``STALL_GAIN * scale`` means the supremum lies at infinity along a
    direction; the value has then converged even though ``lam`` has not.
    """
    d = lam.size
    value = model.value(lam)
    steps: list[float] = []
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        grad, hess, _ = model.grad_hess(lam)
        g = grad[: d - 1]
        if np.max(np.abs(g), initial=0.0) <= gtol:
            return lam, True, it, False
        H = -hess[: d - 1, : d - 1]
        try:
            direction = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ direction)
        if not np.all(np.isfinite(direction)) or slope <= 0:
            direction, slope = g, float(g @ g)
        step = 1.0
        if slope <= 1e-13 * max(1.0, abs(value)):
            # predicted gain below the resolution of the objective: judge the
            # full step by the gradient instead
            trial = lam.copy()
            trial[: d - 1] += direction
            g_new = model.grad_hess(trial)[0][: d - 1]
            if np.max(np.abs(g_new)) < np.max(np.abs(g)):
                lam, value = trial, model.value(trial)
                steps.append(float(np.linalg.norm(direction)))
                stalled = 0
                continue
        while True:
            trial = lam.copy()
            trial[: d - 1] += step * direction
            new_value = model.value(trial)
            if new_value >= value + ARMIJO_C * step * slope or step < 1e-16:
                break
            step *= 0.5
        gain = new_value - value
        steps.append(float(np.linalg.norm(step * direction)))
        if new_value >= value:
            lam, value = trial, new_value
        if gain < STALL_GAIN * scale and len(steps) > 1 and steps[-1] >= steps[-2] * (1 - 1e-9):
            stalled += 1
        else:
            stalled = 0
        if stalled >= STALL_STEPS:
            return lam, True, it, True
    return lam, False, it, False


def dual_objective(lam, p: RateProblem) -> float:
    return _DualModel(p).value(np.asarray(lam, dtype=float))


def primal_objective(x: np.ndarray, p: RateProblem) -> float:
    return float(sum(p.mu[r, s] * kl_bernoulli(float(np.clip(x[r, s], 0.0, 1.0)), p.alpha)
                     for r, s in zip(*np.nonzero(p.E))))


def _balance_lp(p: RateProblem):
    """Feasibility of the balance constraint with ``x`` in the unit box (linear program)."""
    d = p.d
    cells = list(zip(*np.nonzero(p.E)))
    rhs = -flow_imbalance(p.nu_fixed)
    if not cells:
        return bool(np.max(np.abs(rhs)) <= 1e-9 * max(1.0, p.nu_fixed.sum()))
    A = np.zeros((d, len(cells)))
    for j, (r, s) in enumerate(cells):
        A[r, j] += p.mu[r, s]
        A[s, j] -= p.mu[r, s]
    res = linprog(np.zeros(len(cells)), A_eq=A, b_eq=rhs, bounds=[(0.0, 1.0)] * len(cells),
                  method="highs")
    return res.status == 0


def _mass_scale(p: RateProblem) -> float:
    return max(1.0, float(np.where(p.E, p.mu, 0.0).sum() + p.nu_fixed.sum()))


def solve_rate(p: RateProblem, tol: float = GRAD_TOL, max_iter: int = MAX_ITER) -> RateSolution:
    """Rate ``theta`` of a :class:`RateProblem` by damped Newton ascent on the dual.

    The dual may only approach its supremum at infinity (some optimal
    inclusion probability sits at 0 or 1).  The iteration then either meets
    the gradient tolerance along the escaping direction or stalls with
    non-shrinking steps and negligible gains; both end as ``converged`` with
    ``boundary=True``.  An infeasible balance constraint gives ``theta = inf``.
    The gradient tolerance is relative to the total mass (at least 1).
    """
    d = p.d
    if not _balance_lp(p):
        nan = np.full((d, d), np.nan)
        return RateSolution(math.inf, nan, np.full(d, np.nan), True, math.inf, boundary=True,
                            info={"infeasible": True})
    scale = _mass_scale(p)
    model = _DualModel(p)
    lam, converged, it, stalled = _ascend(model, np.zeros(d), tol * scale, scale, max_iter)
    grad, _, x = model.grad_hess(lam)
    x_star = np.where(p.E, x, np.nan)
    xe = x[p.E]
    boundary = bool(xe.size and (xe.min() < BOUNDARY_EPS or xe.max() > 1 - BOUNDARY_EPS))
    theta = max(model.value(lam), 0.0)
    return RateSolution(theta, x_star, lam - lam[-1], converged, float(np.max(np.abs(grad))),
                        boundary=boundary, iterations=it, primal_value=primal_objective(x, p),
                        info={"stalled": stalled})


def theta_of_w(w, alpha: float) -> float:
    """Limiting decay rate of ``q(n w)^(1/n)``: ``E`` = support of ``w``, no fixed flows."""
    return solve_rate(RateProblem.from_support(w, alpha)).theta


def theta_with_fixed(nu_fixed, mu, E, alpha: float) -> float:
    return solve_rate(RateProblem(E, mu, nu_fixed, alpha)).theta


def _free_cells(mu: np.ndarray, E: np.ndarray) -> list[tuple[int, int]]:
    comp = off_diagonal_mask(mu.shape[0]) & ~E
    return [(int(r), int(s)) for r, s in zip(*np.nonzero(comp & (mu > 0)))]


@dataclass
class BoxInfimum:
    theta: float
    lower: float
    upper: float
    lam: np.ndarray


def theta_box_infimum(mu, E, alpha: float, tol: float = 1e-8,
                      temperatures=tuple(10.0 ** -k for k in range(0, 14))) -> BoxInfimum:
    """Infimum of ``theta(nu', mu)`` over ``0 <= nu'_rs <= mu_rs`` outside ``E``.

    Exchanging the infimum with the dual supremum (the box is compact) gives
    ``sup_lam [sum_E mu f(t) + sum_rest mu min(0, t)]``.  The kink of
    ``min(0, t)`` is smoothed at temperature ``s`` and ``s`` is driven to
    zero, each stage warm-started from the previous one.  At the end,
    ``lower`` is the exact nonsmooth dual at the final potentials and
    ``upper`` adds the smoothing allowance ``s ln 2 sum_rest mu``.
    The result is always finite: ``x = 0`` with ``nu' = 0`` is balanced.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    E = np.asarray(E, dtype=bool) & off_diagonal_mask(d)
    rest = off_diagonal_mask(d) & ~E
    soft = np.where(rest, mu, 0.0)
    p = RateProblem(E, mu, np.zeros_like(mu), alpha)
    scale = max(1.0, float(np.where(E, mu, 0.0).sum() + soft.sum()))
    lam = np.zeros(d)
    s = temperatures[-1]
    for s in temperatures:
        model = _DualModel(p, soft, s)
        lam, _, _, _ = _ascend(model, lam, tol * 1e-2 * scale, scale, MAX_ITER)
    t = lam[:, None] - lam[None, :]
    f = -np.logaddexp(math.log(alpha) - t, math.log1p(-alpha))
    lower = float((np.where(E, mu, 0.0) * f).sum() + (soft * np.minimum(0.0, t)).sum())
    upper = _DualModel(p, soft, s).value(lam) + s * math.log(2.0) * float(soft.sum())
    lower = max(lower, 0.0)
    return BoxInfimum(lower, lower, max(upper, lower), lam - lam[-1])


def theta_bounds(mu, E, alpha: float, tol: float = 1e-8,
                 max_vertex_coords: int = MAX_VERTEX_COORDS) -> tuple[float, float]:
    """Inf and sup of ``theta(nu', mu)`` over the box ``0 <= nu'_rs <= mu_rs`` outside ``E``.

    The infimum is :func:`theta_box_infimum`.  The supremum of a convex
    function over a box sits at a vertex, so it is found by enumerating all
    ``2^k`` vertices (``k <= max_vertex_coords``).
    """
    mu = np.asarray(mu, dtype=float)
    E = np.asarray(E, dtype=bool) & off_diagonal_mask(mu.shape[0])
    cells = _free_cells(mu, E)
    if len(cells) > max_vertex_coords:
        raise GuardExceeded(f"{len(cells)} free box coordinates exceed {max_vertex_coords}")
    theta_l = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=len(cells)):
        nu = np.zeros_like(mu)
        for (r, s), b in zip(cells, bits):
            nu[r, s] = b * mu[r, s]
        theta_l = max(theta_l, solve_rate(RateProblem(E, mu, nu, alpha)).theta)
    if not cells:
        return theta_l, theta_l
    return theta_box_infimum(mu, E, alpha, tol).theta, theta_l


def check_lambda_bound(sol: RateSolution, p: RateProblem) -> bool:
    """``sum_E mu (lam_r - lam_s)^2 <= kappa(alpha) sum_E mu`` at the solver optimum."""
    lhs, rhs = lambda_bound_terms(sol, p)
    return lhs <= rhs * (1 + 1e-12)


def lambda_bound_terms(sol: RateSolution, p: RateProblem) -> tuple[float, float]:
    lam = sol.lam
    diff = lam[:, None] - lam[None, :]
    muE = np.where(p.E, p.mu, 0.0)
    return float((muE * diff**2).sum()), kappa(p.alpha) * float(muE.sum())


def flow_certificate(mu, E, alpha: float) -> bool:
    """Does some box point ``nu'`` (``0 <= nu' <= mu`` outside ``E``) make ``(alpha mu on E, nu')`` a flow?

    Decided by a linear feasibility program.  With ``E`` covering the whole
    off-diagonal support this reduces to ``mu`` being an Eulerian flow.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    E = np.asarray(E, dtype=bool) & off_diagonal_mask(d)
    cells = _free_cells(mu, E)
    base = flow_imbalance(np.where(E, alpha * mu, 0.0))
    if not cells:
        return bool(np.max(np.abs(base)) <= 1e-10 * max(1.0, mu.sum()))
    A = np.zeros((d, len(cells)))
    for j, (r, s) in enumerate(cells):
        A[r, j] += 1.0
        A[s, j] -= 1.0
    res = linprog(np.zeros(len(cells)), A_eq=A, b_eq=-base,
                  bounds=[(0.0, float(mu[r, s])) for r, s in cells], method="highs")
    return res.status == 0
