import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space

from hqp.flows import (
    FlowGraph,
    bareiss_det,
    cauchy_binet_tree_expansion,
    charpoly_coefficients,
    complement_has_cycle,
    constant_cd,
    constant_cd_quadrature,
    count_spanning_trees,
    cycle_gram_determinant,
    flow_space_basis,
    forest_polynomial,
    fundamental_cycle_basis,
    gaussian_flow_integral_basis,
    gaussian_flow_integral_closed,
    interpolation_limit,
    laplacian_interpolation,
    log_gaussian_flow_integral_basis,
    log_gaussian_flow_integral_closed,
    minor_is_singular,
    principal_minor_coefficients,
    random_spanning_forest,
    rooted_forest_coefficients,
    spanning_tree_polynomial,
    spanning_tree_polynomial_enum,
    tree_from_pairs,
)

K2 = FlowGraph.complete(2, loops=False)


def cayley(d):
    return 2 ** (d - 1) * d ** (d - 2)


def random_weights(rng, d):
    return rng.uniform(0.2, 3.0, size=(d, d))


def random_subgraph(rng, d, loops=True):
    """Random directed edge subset of the doubled complete graph (possibly disconnected)."""
    keep = rng.random((d, d)) < 0.55
    edges = [(r, s) for r in range(d) for s in range(d) if r != s and keep[r, s]]
    lp = [v for v in range(d) if loops and rng.random() < 0.5]
    return FlowGraph(d, tuple(edges), tuple(lp))


def orthonormal_integral(g, w):
    """Oracle: integrate over an orthonormal basis of the flow space from scipy's null_space."""
    x = g.edge_weights(w)
    lw = g.loop_weights(w)
    ne = len(g.edges)
    inc = np.zeros((g.d, ne + len(g.loops)))
    for i, (r, s) in enumerate(g.edges):
        inc[r, i] += 1
        inc[s, i] -= 1
    Q = null_space(inc) if inc.shape[1] else np.zeros((0, 0))
    k = Q.shape[1]
    if k == 0:
        return 1.0
    a = 1.0 / np.r_[x, lw]
    return (2 * math.pi) ** (k / 2) / math.sqrt(np.linalg.det(Q.T @ (a[:, None] * Q)))


# ------------------------------------------------------------ cycle bases

def test_k2_cycle_basis():
    cb = fundamental_cycle_basis(K2, tree_from_pairs(K2, [(0, 1)]))
    assert cb.P.tolist() == [[1, 1]]  # edges listed (0,1), (1,0)


def test_star_basis_rows_are_triangles():
    g = FlowGraph.complete(3, loops=False)
    P = fundamental_cycle_basis(g).P
    assert P.shape[0] == 4
    assert all(np.count_nonzero(row) <= 3 for row in P)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_row_count_and_cycles_are_flows(d):
    g = FlowGraph.complete(d, loops=False)
    cb = fundamental_cycle_basis(g)
    assert cb.P.shape == ((d - 1) ** 2, d * (d - 1))
    for row, e in zip(cb.P, cb.off_tree):
        assert row[e] == 1
        net = np.zeros(d)
        for coef, (r, s) in zip(row, g.edges):
            net[r] += coef
            net[s] -= coef
        assert np.all(net == 0)


def test_non_spanning_tree_rejected():
    g = FlowGraph.complete(3, loops=False)
    with pytest.raises(ValueError):
        fundamental_cycle_basis(g, tree_from_pairs(g, [(0, 1)]))


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_gram_determinant_equals_tree_count(d):
    assert cycle_gram_determinant(d) == cayley(d)
    assert count_spanning_trees(FlowGraph.complete(d, loops=False)) == cayley(d)


# ------------------------------------------------------------ tree polynomials

def test_k2_tree_polynomial():
    w = np.array([[0.0, 2.0], [5.0, 0.0]])
    t = spanning_tree_polynomial(K2, w)
    assert t.nst == 2
    assert t.value == pytest.approx(3.5, rel=1e-14)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_unit_weights_give_one(d):
    t = spanning_tree_polynomial(FlowGraph.complete(d, loops=False), np.ones((d, d)))
    assert t.value == pytest.approx(1.0, rel=1e-12)
    assert t.nst == cayley(d)


def test_k3_has_twelve_trees():
    assert count_spanning_trees(FlowGraph.complete(3)) == 12


def test_forest_polynomial_components():
    g = FlowGraph(4, ((0, 1), (1, 0), (2, 3), (3, 2)))
    w = np.zeros((4, 4))
    w[0, 1], w[1, 0], w[2, 3], w[3, 2] = 1.5, 2.5, 0.5, 4.0
    assert forest_polynomial(g, w).value == pytest.approx((1.5 + 2.5) * (0.5 + 4.0) / 4, rel=1e-13)
    assert forest_polynomial(FlowGraph(3, ()), np.ones((3, 3))).value == 1.0
    full = FlowGraph.complete(3, loops=False)
    w3 = np.arange(1.0, 10.0).reshape(3, 3)
    assert forest_polynomial(full, w3).value == spanning_tree_polynomial(full, w3).value


def test_disconnected_rejected_by_tree_polynomial():
    with pytest.raises(ValueError):
        spanning_tree_polynomial(FlowGraph(3, ((0, 1),)), np.ones((3, 3)))


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_kirchhoff_exact_matches_enumeration(d):
    rng = np.random.default_rng(d)
    g = FlowGraph.complete(d, loops=False)
    w = [[Fraction(int(rng.integers(1, 9)), int(rng.integers(1, 5))) for _ in range(d)] for _ in range(d)]
    exact = spanning_tree_polynomial(g, w, exact=True).value
    brute = Fraction(0)
    count = 0
    for T in itertools.combinations(range(len(g.edges)), d - 1):
        sub = FlowGraph(d, tuple(g.edges[i] for i in T))
        if sub.ncc == 1:
            term = Fraction(1)
            for i in T:
                r, s = g.edges[i]
                term *= w[r][s]
            brute += term
            count += 1
    assert exact == brute / count
    wf = np.array([[float(v) for v in row] for row in w])
    assert spanning_tree_polynomial_enum(g, wf).value == pytest.approx(float(exact), rel=1e-12)
    assert spanning_tree_polynomial(g, wf).value == pytest.approx(float(exact), rel=1e-12)


def test_bareiss_exact():
    M = [[2, -1, 0], [-1, 2, -1], [0, -1, 2]]
    assert bareiss_det(M) == 4
    assert bareiss_det([[Fraction(1, 2), 1], [1, 3]]) == Fraction(1, 2)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(2, 5), st.floats(0.1, 10.0))
def test_homogeneity(seed, d, c):
    rng = np.random.default_rng(seed)
    g = random_subgraph(rng, d, loops=False)
    w = random_weights(rng, d)
    P1 = forest_polynomial(g, w).value
    P2 = forest_polynomial(g, c * w).value
    assert P2 == pytest.approx(c ** (d - g.ncc) * P1, rel=1e-10)
    K = FlowGraph.complete(d, loops=False)
    assert spanning_tree_polynomial(K, c * w).value == pytest.approx(
        c ** (d - 1) * spanning_tree_polynomial(K, w).value, rel=1e-10)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(2, 5))
def test_diagonal_independence(seed, d):
    rng = np.random.default_rng(seed)
    g = random_subgraph(rng, d, loops=False)
    w = random_weights(rng, d)
    w2 = w.copy()
    np.fill_diagonal(w2, rng.uniform(0, 100, size=d))
    assert forest_polynomial(g, w2).value == forest_polynomial(g, w).value
    assert interpolation_limit(w2) == interpolation_limit(w)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(2, 5))
def test_multi_affinity(seed, d):
    rng = np.random.default_rng(seed)
    g = FlowGraph.complete(d, loops=False)
    w = random_weights(rng, d)
    r, s = g.edges[int(rng.integers(len(g.edges)))]
    vals = []
    for v in (0.5, 1.7, 4.1):
        w[r, s] = v
        vals.append(spanning_tree_polynomial(g, w).value)
    slope1 = (vals[1] - vals[0]) / 1.2
    slope2 = (vals[2] - vals[1]) / 2.4
    assert slope1 == pytest.approx(slope2, rel=1e-8, abs=1e-12)


# ------------------------------------------------------------ Gaussian integrals

@pytest.mark.parametrize("d", [2, 3, 4])
def test_unit_weight_integral(d):
    g = FlowGraph.complete(d)
    assert g.flow_dim == (d - 1) ** 2 + d
    expected = (2 * math.pi) ** (((d - 1) ** 2 + d) / 2)
    assert gaussian_flow_integral_closed(g, np.ones((d, d))) == pytest.approx(expected, rel=1e-12)
    assert gaussian_flow_integral_basis(g, np.ones((d, d))) == pytest.approx(expected, rel=1e-12)


def test_k2_hand_value():
    g = FlowGraph.complete(2)
    w11, w22, w12, w21 = 0.7, 1.9, 2.3, 0.4
    w = np.array([[w11, w12], [w21, w22]])
    hand = (2 * math.pi) ** 1.5 * math.sqrt(2 * w11 * w22 * w12 * w21 / (w12 + w21))
    assert gaussian_flow_integral_closed(g, w) == pytest.approx(hand, rel=1e-12)
    assert gaussian_flow_integral_basis(g, w) == pytest.approx(hand, rel=1e-12)


def test_scaling_at_c4():
    rng = np.random.default_rng(3)
    g = FlowGraph.complete(3)
    w = random_weights(rng, 3)
    ratio = gaussian_flow_integral_closed(g, 4 * w) / gaussian_flow_integral_closed(g, w)
    n_coords = len(g.edges) + len(g.loops)
    assert ratio == pytest.approx(4 ** (n_coords / 2) / 4 ** ((3 - g.ncc) / 2), rel=1e-12)


def test_nonpositive_weight_rejected():
    w = np.ones((2, 2))
    w[0, 1] = 0.0
    with pytest.raises(ValueError):
        gaussian_flow_integral_closed(FlowGraph.complete(2), w)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_closed_form_vs_basis_random(d):
    rng = np.random.default_rng(100 + d)
    for _ in range(100):
        g = FlowGraph.complete(d) if rng.random() < 0.4 else random_subgraph(rng, d)
        w = random_weights(rng, d)
        a = log_gaussian_flow_integral_closed(g, w)
        b = log_gaussian_flow_integral_basis(g, w)
        c = math.log(orthonormal_integral(g, w))
        assert math.exp(a - b) == pytest.approx(1.0, rel=1e-9)
        assert math.exp(a - c) == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=40)
@given(st.integers(0, 2**32), st.integers(2, 5))
def test_basis_independence(seed, d):
    rng = np.random.default_rng(seed)
    g = random_subgraph(rng, d)
    w = random_weights(rng, d)
    t1 = random_spanning_forest(g, rng)
    t2 = random_spanning_forest(g, rng)
    a = log_gaussian_flow_integral_basis(g, w, t1)
    b = log_gaussian_flow_integral_basis(g, w, t2)
    assert math.exp(a - b) == pytest.approx(1.0, rel=1e-10)
    B = flow_space_basis(g, t1)
    assert B.shape[1] == g.flow_dim
    if B.size:
        assert np.linalg.matrix_rank(B) == B.shape[1]


# ------------------------------------------------------------ Cauchy-Binet

def test_cauchy_binet_unit_d3():
    rep = cauchy_binet_tree_expansion(FlowGraph.complete(3, loops=False), np.ones((3, 3)))
    assert rep.direct == pytest.approx(12.0, rel=1e-12)
    assert rep.tree_sum == pytest.approx(12.0, rel=1e-12)
    assert rep.singular_minors_ok


def test_cauchy_binet_k2():
    w = np.array([[0.0, 3.0], [0.25, 0.0]])
    rep = cauchy_binet_tree_expansion(K2, w)
    assert rep.direct == pytest.approx(1 / 3.0 + 1 / 0.25, rel=1e-12)


@pytest.mark.parametrize("d", [3, 4])
def test_cauchy_binet_random(d):
    rng = np.random.default_rng(d)
    g = FlowGraph.complete(d, loops=False)
    w = random_weights(rng, d)
    rep = cauchy_binet_tree_expansion(g, w)
    assert rep.minor_sum == pytest.approx(rep.direct, rel=1e-9)
    # det(P M^-1 P^T) = nst * prod(1/w) * T(w)
    x = g.edge_weights(w)
    expected = cayley(d) * spanning_tree_polynomial(g, w).value / np.prod(x)
    assert rep.direct == pytest.approx(expected, rel=1e-9)


def test_singular_minor_iff_cycle_in_complement():
    g = FlowGraph.complete(3, loops=False)
    for S in itertools.combinations(range(6), 4):
        assert minor_is_singular(g, S) == complement_has_cycle(g, S)
    # complement {(0,1),(1,0)} is a 2-cycle
    S = tuple(i for i, e in enumerate(g.edges) if e not in {(0, 1), (1, 0)})
    assert minor_is_singular(g, S)


# ------------------------------------------------------------ Laplacian interpolation

def test_interpolation_d2():
    vals = laplacian_interpolation(np.ones((2, 2)), [1e-1, 1e-3])
    assert vals[0] == pytest.approx(4 + 1e-2, rel=1e-12)
    assert vals[1] == pytest.approx(4.0, abs=1e-5)
    assert interpolation_limit(np.ones((2, 2))) == pytest.approx(4.0)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_interpolation_converges(d):
    w = random_weights(np.random.default_rng(d), d)
    vals = laplacian_interpolation(w, [1.0, 0.1, 1e-2, 1e-4])
    lim = interpolation_limit(w)
    errs = [abs(v - lim) for v in vals]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-6 * lim


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_charpoly_three_ways(d):
    w = random_weights(np.random.default_rng(10 + d), d)
    a = charpoly_coefficients(w)
    b = principal_minor_coefficients(w)
    c = rooted_forest_coefficients(w)
    scale = np.abs(c).max()
    np.testing.assert_allclose(a, c, rtol=1e-8, atol=1e-9 * scale)
    np.testing.assert_allclose(b, c, rtol=1e-8, atol=1e-9 * scale)
    assert c[d] == 1.0 and abs(c[0]) <= 1e-9 * scale
    # the linear coefficient is d * nst * T(w)
    T = spanning_tree_polynomial(FlowGraph.complete(d, loops=False), w).value
    assert c[1] == pytest.approx(d * cayley(d) * T, rel=1e-10)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_linear_coefficient_unit(d):
    c = rooted_forest_coefficients(np.ones((d, d)))
    assert c[1] == pytest.approx(d * cayley(d), rel=1e-12)


# ------------------------------------------------------------ c_d

def test_constant_cd_values():
    assert constant_cd(2) == pytest.approx(0.5)
    assert constant_cd(3) == pytest.approx(1 / 6)
    with pytest.raises(ValueError):
        constant_cd(1)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_constant_cd_quadrature(d):
    assert constant_cd_quadrature(d) == pytest.approx(constant_cd(d), rel=1e-6)
