"""Polynomial versus exponential decay of collision probabilities.

For a balanced direction w the exact q(n w) decays like n^{-(d - ncc)/2};
otherwise like exp(-n theta(w)).  Both fits are printed next to the
prediction, together with the corrected statistic that should level off.

    python demos/collision_regimes.py
"""

import numpy as np

from hqp.asymptotics import ScalingExperiment, verify_exponential_rate, verify_polynomial_rate
from hqp.flows import FlowGraph, forest_polynomial


def main():
    balanced = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]]) / 6
    exp = ScalingExperiment(balanced, list(range(12, 121, 12)), 0.5)
    fit = verify_polynomial_rate(exp)
    print(f"balanced w: fitted slope {fit.slope:.4f}, predicted {fit.target}, pass={fit.passed}")
    for p in fit.points[::3]:
        print(f"  n={p.n:4d} q={p.q:.6e}")

    skewed = np.array([[0, 0.4, 0.1], [0, 0, 0.3], [0.1, 0, 0]])
    exp = ScalingExperiment(skewed, list(range(20, 201, 20)), 0.5)
    fit = verify_exponential_rate(exp)
    print(f"\nunbalanced w: fitted rate {fit.rate:.5f}, -theta(w) {-fit.theta:.5f}, pass={fit.passed}")
    graph = FlowGraph.from_support(skewed)
    for p in fit.points[::3]:
        corrected = p.ln_q + p.n * fit.theta + 0.5 * np.log(forest_polynomial(graph, p.mu.astype(float)).value)
        print(f"  n={p.n:4d} ln q={p.ln_q:10.4f}  ln q + n theta + ln(P_G)/2 = {corrected:.4f}")


if __name__ == "__main__":
    main()
