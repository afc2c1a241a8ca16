"""Monte Carlo sweep of the non-uniqueness probability across query rates.

At desk-scale n the transition is smeared out, but the probability still
falls from near 1 to near 0 as gamma grows past the thresholds.

    python demos/phase_transition.py [n] [trials]
"""

import sys

from hqp.counting import estimate_prob_E
from hqp.instance import InstanceParams, query_count_for_gamma
from hqp.thresholds import expected_excess_solutions, thresholds


def main(n=12, trials=300):
    pi = (0.5, 0.5)
    rep = thresholds(pi)
    print(f"n={n}, pi={pi}: gamma_low={rep.gamma_low:.3f}, gamma_up={rep.gamma_up:.3f}")
    print(" gamma   m   P(E)     stderr   E[Z-1] (exact)")
    for i in range(1, 16, 2):
        g = 0.2 * i
        m = query_count_for_gamma(n, g)
        params = InstanceParams(n, 2, pi, 0.5, m, seed=3)
        p, se = estimate_prob_E(params, trials, workers=1)
        first = expected_excess_solutions(params) if n <= 12 else float("nan")
        print(f" {g:4.1f} {m:4d}  {p:.3f}   {se:.3f}    {first:.4g}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
