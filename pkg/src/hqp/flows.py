"""Flow spaces of directed graphs on ``d`` vertices, spanning-tree polynomials and Gaussian flow integrals.

A :class:`FlowGraph` has directed edges ``(r, s)`` with ``r != s`` (both
orientations of a pair may be present, giving two parallel edges of the
underlying undirected multigraph) and optionally self-loops.  Its flow space
is the set of edge vectors with zero net flow at every vertex, plus a free
coordinate per loop.  Vertices are 0-indexed.

The central identity checked here: for positive weights,

    integral over the flow space of exp(-sum_e z_e^2 / (2 w_e)) dz
        = (2 pi)^(dim/2) * sqrt(prod_e w_e / P_G(w)),

with the induced Lebesgue measure and ``P_G`` the normalised spanning-forest
polynomial.  Three routes are offered: the closed form, a change of variables
through a fundamental cycle basis, and a Cauchy-Binet expansion of the basis
Gram determinant.  A Laplacian interpolation reaches the tree polynomial
through a characteristic polynomial instead.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import off_diagonal_mask

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowGraph:
    d: int
    edges: tuple  # ordered (r, s) pairs, r != s
    loops: tuple = ()  # vertices carrying a free diagonal coordinate

    def __post_init__(self):
        edges = tuple((int(r), int(s)) for r, s in self.edges)
        loops = tuple(sorted(int(v) for v in self.loops))
        if self.d < 1:
            raise ValueError("need at least one vertex")
        for r, s in edges:
            if r == s:
                raise ValueError("self-loops go in `loops`, not in the edge list")
            if not (0 <= r < self.d and 0 <= s < self.d):
                raise ValueError(f"edge {(r, s)} out of range")
        if len(set(edges)) != len(edges):
            raise ValueError("each directed pair may appear at most once")
        if len(set(loops)) != len(loops) or any(not 0 <= v < self.d for v in loops):
            raise ValueError("bad loop list")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "loops", loops)

    @classmethod
    def complete(cls, d: int, loops: bool = True) -> "FlowGraph":
        """Doubled complete graph (all ``d(d-1)`` ordered pairs), optionally with every loop."""
        edges = [(r, s) for r in range(d) for s in range(d) if r != s]
        return cls(d, tuple(edges), tuple(range(d)) if loops else ())

    @classmethod
    def from_support(cls, w, loops: bool = False) -> "FlowGraph":
        """Edges where ``w`` is positive off the diagonal; loops where its diagonal is positive."""
        w = np.asarray(w, dtype=float)
        d = w.shape[0]
        edges = [(r, s) for r in range(d) for s in range(d) if r != s and w[r, s] > 0]
        lp = [r for r in range(d) if w[r, r] > 0] if loops else []
        return cls(d, tuple(edges), tuple(lp))

    def components(self) -> list[list[int]]:
        parent = list(range(self.d))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for r, s in self.edges:
            parent[find(r)] = find(s)
        groups: dict[int, list[int]] = {}
        for v in range(self.d):
            groups.setdefault(find(v), []).append(v)
        return sorted(groups.values())

    @property
    def ncc(self) -> int:
        return len(self.components())

    @property
    def flow_dim(self) -> int:
        return len(self.edges) - (self.d - self.ncc) + len(self.loops)

    def subgraph(self, vertices) -> "FlowGraph":
        idx = {v: i for i, v in enumerate(vertices)}
        edges = [(idx[r], idx[s]) for r, s in self.edges if r in idx and s in idx]
        return FlowGraph(len(vertices), tuple(edges), tuple(idx[v] for v in self.loops if v in idx))

    def edge_weights(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([w[r, s] for r, s in self.edges], dtype=float)

    def loop_weights(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([w[v, v] for v in self.loops], dtype=float)


@dataclass
class TreePolyValue:
    value: float
    nst: int


@dataclass
class CycleBasisMatrix:
    P: np.ndarray  # (off-tree edges) x (edges), entries in {-1, 0, 1}
    tree: tuple  # edge indices of the spanning forest
    off_tree: tuple  # edge index defining each row


# ---------------------------------------------------------------- determinants

def bareiss_det(M) -> Fraction:
    """Exact determinant of a matrix of integers or fractions (fraction-free elimination)."""
    A = [[Fraction(x) for x in row] for row in M]
    n = len(A)
    if n == 0:
        return Fraction(1)
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if A[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if A[i][k] != 0), None)
            if swap is None:
                return Fraction(0)
            A[k], A[swap] = A[swap], A[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) / prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1]


def _undirected_laplacian(g: FlowGraph, weights) -> np.ndarray:
    L = np.zeros((g.d, g.d), dtype=object if _is_exact(weights) else float)
    for (r, s), x in zip(g.edges, weights):
        L[r, r] += x
        L[s, s] += x
        L[r, s] -= x
        L[s, r] -= x
    return L


def _is_exact(weights) -> bool:
    return any(isinstance(x, (int, Fraction)) and not isinstance(x, bool) for x in weights) \
        and all(isinstance(x, (int, Fraction)) for x in weights)


def _cofactor(L, exact: bool):
    if L.shape[0] <= 1:
        return Fraction(1) if exact else 1.0
    minor = L[1:, 1:]
    if exact:
        return bareiss_det(minor.tolist())
    return float(np.linalg.det(minor.astype(float)))


# ---------------------------------------------------------------- tree polynomials

def count_spanning_trees(g: FlowGraph) -> int:
    """Number of spanning trees (parallel edges distinct), exact via the Kirchhoff cofactor."""
    L = _undirected_laplacian(g, [1] * len(g.edges))
    return int(_cofactor(L, exact=True))


def spanning_tree_polynomial(g: FlowGraph, w, exact: bool = False) -> TreePolyValue:
    """Normalised tree polynomial ``(1/nst) sum_T prod_{e in T} w_e`` by the weighted Kirchhoff cofactor.

    The Laplacian uses undirected weight ``w_rs + w_sr`` for each pair.  With
    ``exact=True`` the weights are converted to fractions and the determinant
    is taken by fraction-free elimination.
    """
    if g.ncc != 1:
        raise ValueError("spanning tree polynomial needs a connected graph")
    nst = count_spanning_trees(g)
    if exact:
        weights = [Fraction(x) for x in _raw_edge_weights(g, w)]
        val = _cofactor(_undirected_laplacian(g, weights), exact=True) / nst
        return TreePolyValue(val, nst)
    val = _cofactor(_undirected_laplacian(g, g.edge_weights(w)), exact=False) / nst
    return TreePolyValue(float(val), nst)


def _raw_edge_weights(g: FlowGraph, w):
    if isinstance(w, np.ndarray) and w.dtype != object:
        return [w[r, s].item() for r, s in g.edges]
    return [w[r][s] for r, s in g.edges]


def _is_spanning_forest(g: FlowGraph, subset) -> bool:
    """``subset`` (edge indices) is acyclic with ``d - ncc`` edges."""
    parent = list(range(g.d))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in subset:
        r, s = g.edges[e]
        a, b = find(r), find(s)
        if a == b:
            return False
        parent[a] = b
    return len(subset) == g.d - g.ncc


def enumerate_spanning_forests(g: FlowGraph):
    """Yield every maximal spanning forest as a tuple of edge indices."""
    k = g.d - g.ncc
    for subset in itertools.combinations(range(len(g.edges)), k):
        if _is_spanning_forest(g, subset):
            yield subset


def spanning_tree_polynomial_enum(g: FlowGraph, w) -> TreePolyValue:
    """Tree polynomial by explicit enumeration of spanning trees (small graphs only)."""
    if g.ncc != 1:
        raise ValueError("spanning tree polynomial needs a connected graph")
    if g.d > 6:
        raise ValueError("enumeration oracle limited to d <= 6")
    x = g.edge_weights(w)
    terms = [math.prod(x[e] for e in T) for T in enumerate_spanning_forests(g)]
    return TreePolyValue(math.fsum(terms) / len(terms), len(terms))


def forest_polynomial(g: FlowGraph, w, exact: bool = False) -> TreePolyValue:
    """Product of the component tree polynomials (1 for an edgeless graph)."""
    value = Fraction(1) if exact else 1.0
    nst = 1
    w_arr = w
    for comp in g.components():
        if len(comp) == 1:
            continue
        sub = g.subgraph(comp)
        if exact:
            wc = [[w_arr[r][s] for s in comp] for r in comp]
            t = spanning_tree_polynomial(sub, wc, exact=True)
        else:
            wc = np.asarray(w_arr, dtype=float)[np.ix_(comp, comp)]
            t = spanning_tree_polynomial(sub, wc)
        value = value * t.value
        nst *= t.nst
    return TreePolyValue(value, nst)


# ---------------------------------------------------------------- cycle bases

def default_spanning_forest(g: FlowGraph, root: int = 0) -> tuple:
    """Star at ``root`` when the graph allows it, otherwise a BFS forest.

    Returns edge indices.  Among parallel edges the one listed first wins.
    """
    chosen: dict[frozenset, int] = {}
    for i, (r, s) in enumerate(g.edges):
        chosen.setdefault(frozenset((r, s)), i)
    adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(g.d)}
    for key, i in sorted(chosen.items(), key=lambda kv: kv[1]):
        r, s = g.edges[i]
        adj[r].append((s, i))
        adj[s].append((r, i))
    seen = [False] * g.d
    tree = []
    starts = [root] + [v for v in range(g.d) if v != root]
    for start in starts:
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v, i in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    tree.append(i)
                    queue.append(v)
    return tuple(sorted(tree))


def random_spanning_forest(g: FlowGraph, rng: np.random.Generator) -> tuple:
    """Spanning forest from Kruskal's rule over a random edge order."""
    parent = list(range(g.d))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = []
    for i in rng.permutation(len(g.edges)):
        r, s = g.edges[int(i)]
        a, b = find(r), find(s)
        if a != b:
            parent[a] = b
            tree.append(int(i))
    return tuple(sorted(tree))


def _tree_path(g: FlowGraph, tree, start: int, goal: int) -> list[tuple[int, int]]:
    """Edges of the tree path from ``start`` to ``goal`` as (edge index, +1 forward / -1 backward)."""
    adj: dict[int, list[tuple[int, int, int]]] = {v: [] for v in range(g.d)}
    for i in tree:
        r, s = g.edges[i]
        adj[r].append((s, i, 1))
        adj[s].append((r, i, -1))
    prev: dict[int, tuple[int, int, int]] = {start: (start, -1, 0)}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            break
        for v, i, sgn in adj[u]:
            if v not in prev:
                prev[v] = (u, i, sgn)
                queue.append(v)
    if goal not in prev:
        raise ValueError("tree does not connect the endpoints of an off-tree edge")
    path = []
    v = goal
    while v != start:
        u, i, sgn = prev[v]
        path.append((i, sgn))
        v = u
    return path[::-1]


def fundamental_cycle_basis(g: FlowGraph, tree=None) -> CycleBasisMatrix:
    """One signed cycle per off-tree edge ``e = (a, b)``: ``+1`` at ``e``, then the tree path back from ``b`` to ``a``."""
    if tree is None:
        tree = default_spanning_forest(g)
    tree = tuple(sorted(int(i) for i in tree))
    if not _is_spanning_forest(g, tree):
        raise ValueError("tree is not a spanning forest of the graph")
    tset = set(tree)
    off = tuple(i for i in range(len(g.edges)) if i not in tset)
    P = np.zeros((len(off), len(g.edges)), dtype=np.int64)
    for row, e in enumerate(off):
        a, b = g.edges[e]
        P[row, e] = 1
        for i, sgn in _tree_path(g, tree, b, a):
            P[row, i] += sgn
    return CycleBasisMatrix(P, tree, off)


def tree_from_pairs(g: FlowGraph, pairs) -> tuple:
    """Edge indices of the given ``(r, s)`` pairs."""
    index = {e: i for i, e in enumerate(g.edges)}
    return tuple(sorted(index[(int(r), int(s))] for r, s in pairs))


def cycle_gram_determinant(d: int) -> int:
    """Exact ``det(P P^T)`` for the star-rooted cycle basis of the doubled complete graph."""
    P = fundamental_cycle_basis(FlowGraph.complete(d, loops=False)).P
    G = P @ P.T
    return int(bareiss_det(G.tolist()))


# ---------------------------------------------------------------- Gaussian integrals

def _check_weights(g: FlowGraph, w):
    x = g.edge_weights(w)
    lw = g.loop_weights(w)
    if np.any(x <= 0) or np.any(lw <= 0):
        raise ValueError("weights on edges and loops must be positive")
    return x, lw


def log_gaussian_flow_integral_closed(g: FlowGraph, w) -> float:
    x, lw = _check_weights(g, w)
    P_G = forest_polynomial(g, w).value
    return (0.5 * g.flow_dim * LOG_2PI
            + 0.5 * (np.log(x).sum() + np.log(lw).sum() - math.log(P_G)))


def gaussian_flow_integral_closed(g: FlowGraph, w) -> float:
    """``(2 pi)^(dim/2) * sqrt(prod w / P_G(w))`` over edges and loops."""
    return math.exp(log_gaussian_flow_integral_closed(g, w))


def flow_space_basis(g: FlowGraph, tree=None) -> np.ndarray:
    """Columns spanning the flow space: fundamental cycles, then one unit vector per loop.

    Ambient coordinates are the edges in order followed by the loops.
    """
    P = fundamental_cycle_basis(g, tree).P.astype(float)
    ne, nl = len(g.edges), len(g.loops)
    B = np.zeros((ne + nl, P.shape[0] + nl))
    B[:ne, : P.shape[0]] = P.T
    B[ne:, P.shape[0]:] = np.eye(nl)
    return B


def log_gaussian_flow_integral_basis(g: FlowGraph, w, tree=None) -> float:
    x, lw = _check_weights(g, w)
    B = flow_space_basis(g, tree)
    k = B.shape[1]
    if k == 0:
        return 0.0
    a = 1.0 / np.r_[x, lw]
    s1, ld_gram = np.linalg.slogdet(B.T @ B)
    s2, ld_quad = np.linalg.slogdet(B.T @ (a[:, None] * B))
    if s1 <= 0 or s2 <= 0:
        raise ArithmeticError("singular basis Gram matrix")
    return 0.5 * k * LOG_2PI + 0.5 * (ld_gram - ld_quad)


def gaussian_flow_integral_basis(g: FlowGraph, w, tree=None) -> float:
    """Same integral by substituting ``z = B t``: ``(2 pi)^(k/2) sqrt(det(B^T B) / det(B^T A B))``, ``A = diag(1/w)``."""
    return math.exp(log_gaussian_flow_integral_basis(g, w, tree))


# ---------------------------------------------------------------- Cauchy-Binet

@dataclass
class CauchyBinetReport:
    direct: float
    minor_sum: float
    tree_sum: float
    singular_minors_ok: bool


def cauchy_binet_tree_expansion(g: FlowGraph, w, rtol: float = 1e-9,
                                max_subsets: int = 200_000) -> CauchyBinetReport:
    """``det(P M^-1 P^T)`` directly, by Cauchy-Binet over column subsets, and as a tree sum.

    For every column subset ``S`` of size ``rank P``, the minor ``P[:, S]`` is
    checked to be singular exactly when the complementary edges fail to form
    a spanning forest, and unimodular otherwise.  Disagreements raise
    ``AssertionError``.
    """
    x = g.edge_weights(w)
    if np.any(x <= 0):
        raise ValueError("edge weights must be positive")
    P = fundamental_cycle_basis(g).P
    k, ne = P.shape
    if math.comb(ne, k) > max_subsets:
        raise ValueError(f"{math.comb(ne, k)} column subsets exceed {max_subsets}")
    direct = float(np.linalg.det((P / x[None, :]) @ P.T)) if k else 1.0
    minor_terms, tree_terms = [], []
    lemma_ok = True
    for S in itertools.combinations(range(ne), k):
        minor = round(np.linalg.det(P[:, S].astype(float))) if k else 1
        complement = tuple(i for i in range(ne) if i not in S)
        is_forest = _is_spanning_forest(g, complement)
        if (minor != 0) != is_forest or (is_forest and abs(minor) != 1):
            lemma_ok = False
        if minor:
            minor_terms.append(minor * minor * math.prod(1.0 / x[i] for i in S))
        if is_forest:
            tree_terms.append(math.prod(1.0 / x[i] for i in S))
    minor_sum = math.fsum(minor_terms)
    tree_sum = math.fsum(tree_terms)
    for name, val in (("Cauchy-Binet sum", minor_sum), ("tree sum", tree_sum)):
        if abs(val - direct) > rtol * abs(direct):
            raise AssertionError(f"{name} {val!r} differs from direct determinant {direct!r}")
    if not lemma_ok:
        raise AssertionError("a minor's singularity does not match its complement's forest status")
    return CauchyBinetReport(direct, minor_sum, tree_sum, lemma_ok)


def minor_is_singular(g: FlowGraph, S, tree=None) -> bool:
    P = fundamental_cycle_basis(g, tree).P
    return round(np.linalg.det(P[:, list(S)].astype(float))) == 0


def complement_has_cycle(g: FlowGraph, S) -> bool:
    rest = [i for i in range(len(g.edges)) if i not in set(S)]
    parent = list(range(g.d))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in rest:
        r, s = g.edges[e]
        a, b = find(r), find(s)
        if a == b:
            return True
        parent[a] = b
    return False


# ---------------------------------------------------------------- Laplacian interpolation

def laplacian(w) -> np.ndarray:
    """``sum over ordered pairs of w_rs (e_r - e_s)(e_r - e_s)^T``; the diagonal of ``w`` is ignored."""
    w = np.asarray(w, dtype=float)
    u = np.where(off_diagonal_mask(w.shape[0]), w, 0.0)
    u = u + u.T
    return np.diag(u.sum(axis=1)) - u


def tree_polynomial_complete(w) -> float:
    """Tree polynomial of the doubled complete graph with weights ``w``."""
    w = np.asarray(w, dtype=float)
    return spanning_tree_polynomial(FlowGraph.complete(w.shape[0], loops=False), w).value


def laplacian_interpolation(w, deltas) -> list[float]:
    """``delta^-2 det(delta^2 I + L(w))`` for each ``delta``.

    The all-ones vector spans an exact null direction of ``L``, so the
    determinant is taken on its orthogonal complement, where it equals
    ``delta^-2`` times the full one without the cancellation at ``delta -> 0``.
    """
    L = laplacian(w)
    d = L.shape[0]
    # orthonormal basis of the complement of the ones vector
    Q, _ = np.linalg.qr(np.c_[np.ones(d), np.eye(d)[:, : d - 1]])
    Lr = Q[:, 1:].T @ L @ Q[:, 1:]
    eig = np.linalg.eigvalsh((Lr + Lr.T) / 2)
    out = []
    for delta in deltas:
        if delta <= 0:
            raise ValueError("deltas must be positive")
        out.append(float(np.prod(delta * delta + eig)))
    return out


def interpolation_limit(w) -> float:
    """The value ``(2d)^(d-1) T(w)`` approached by :func:`laplacian_interpolation`."""
    d = np.asarray(w).shape[0]
    return (2 * d) ** (d - 1) * tree_polynomial_complete(w)


def charpoly_coefficients(w) -> np.ndarray:
    """Coefficients ``c_0..c_d`` of ``det(x I + L(w))`` from the spectrum."""
    eig = np.linalg.eigvalsh(laplacian(w))
    return np.poly(-eig)[::-1].real


def principal_minor_coefficients(w) -> np.ndarray:
    """``c_k`` as the sum of all principal minors of ``L`` of order ``d - k``."""
    L = laplacian(w)
    d = L.shape[0]
    c = np.zeros(d + 1)
    c[d] = 1.0
    for size in range(1, d + 1):
        c[d - size] = math.fsum(float(np.linalg.det(L[np.ix_(R, R)]))
                                for R in itertools.combinations(range(d), size))
    return c


def rooted_forest_coefficients(w) -> np.ndarray:
    """``c_k`` = sum over spanning forests with ``k`` trees of the edge-weight product times the tree sizes.

    Each tree of size ``s`` can be rooted in ``s`` ways, so this is the rooted
    forest count weighted by edges.  Undirected weights are ``w_rs + w_sr``.
    """
    w = np.asarray(w, dtype=float)
    d = w.shape[0]
    if d > 6:
        raise ValueError("forest enumeration limited to d <= 6")
    pairs = [(r, s) for r in range(d) for s in range(r + 1, d)]
    uw = [w[r, s] + w[s, r] for r, s in pairs]
    buckets: list[list[float]] = [[] for _ in range(d + 1)]
    for size in range(d):
        for F in itertools.combinations(range(len(pairs)), size):
            parent = list(range(d))

            def find(a):
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                return a

            acyclic = True
            for i in F:
                a, b = find(pairs[i][0]), find(pairs[i][1])
                if a == b:
                    acyclic = False
                    break
                parent[a] = b
            if not acyclic:
                continue
            sizes: dict[int, int] = {}
            for v in range(d):
                sizes[find(v)] = sizes.get(find(v), 0) + 1
            term = math.prod(uw[i] for i in F) * math.prod(sizes.values())
            buckets[d - size].append(term)
    return np.array([math.fsum(b) for b in buckets])


# ---------------------------------------------------------------- the constant c_d

def constant_cd(d: int) -> float:
    """``(2d)^(-(d-1)/2)``."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return (2.0 * d) ** (-(d - 1) / 2.0)


def constant_cd_quadrature(d: int, nodes: int = 40) -> float:
    """``(2 pi)^(-(d-1)/2)`` times the integral of ``exp(-2 |z 1|^2)`` over the orthogonal complement of the flow space.

    The complement is parameterised by ``z = lam 1^T - 1 lam^T`` with
    ``lam_d = 0`` (a non-orthonormal basis, so the volume factor
    ``sqrt(det(B^T B))`` enters) and integrated by tensor Gauss-Hermite.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    k = d - 1
    B = np.zeros((d * d, k))
    ones = np.ones(d)
    for j in range(k):
        e = np.zeros(d)
        e[j] = 1.0
        B[:, j] = (np.outer(e, ones) - np.outer(ones, e)).ravel()
    # |z 1|^2 = t^T Q t with z 1 = d lam - (1^T lam) 1
    R = np.zeros((d, k))
    for j in range(k):
        R[:, j] = -1.0
        R[j, j] += d
    Q = 2.0 * R.T @ R
    # substitute t = u / s with s^2 below the smallest eigenvalue of Q, leaving
    # a decaying non-polynomial factor for the rule to resolve
    s = math.sqrt(0.6 * np.linalg.eigvalsh(Q).min())
    x, wts = np.polynomial.hermite.hermgauss(nodes)
    total = 0.0
    for idx in itertools.product(range(nodes), repeat=k):
        u = x[list(idx)]
        t = u / s
        total += math.prod(wts[list(idx)]) * math.exp(-(t @ Q @ t) + u @ u)
    volume = math.sqrt(np.linalg.det(B.T @ B))
    integral = total * volume / s**k
    return integral / (2.0 * math.pi) ** (k / 2.0)
