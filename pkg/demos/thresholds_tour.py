"""Thresholds and annealed free energy for a few proportion vectors.

Prints gamma_low, gamma_up, the maximising block count and the free energy
on a small gamma grid, then checks the finite-n free energy drifting toward
its limit.

    python demos/thresholds_tour.py
"""

import numpy as np

from hqp.core import shannon_entropy
from hqp.thresholds import finite_n_free_energy, free_energy, min_partition_entropy, thresholds


def main():
    for pi in [(0.5, 0.5), (0.5, 0.3, 0.2), (0.4, 0.3, 0.2, 0.1), (0.25,) * 4]:
        rep = thresholds(pi)
        print(f"pi={pi}: gamma_low={rep.gamma_low:.6f} gamma_up={rep.gamma_up:.6f} k*={rep.argmax_k}")
        for k in range(1, len(pi)):
            value, X = min_partition_entropy(pi, k)
            blocks = [[int(i) for i in np.flatnonzero(r)] for r in X]
            print(f"  k={k}: least block entropy {value + 0.0:.6f}, blocks {blocks}")
        grid = np.linspace(0.0, 1.5 * rep.gamma_up, 7)
        print("  F(gamma):", " ".join(f"{g:.2f}:{free_energy(pi, g):+.4f}" for g in grid))

    pi = (1 / 3, 2 / 3)
    H = shannon_entropy(np.array(pi))
    print(f"\nfinite-n free energy at pi={pi}, gamma=0.5 (limit {free_energy(pi, 0.5):.4f})")
    for n in (6, 12, 24, 48):
        r = finite_n_free_energy(n, pi, 0.5, 0.5)
        print(f"  n={n:3d}: F_n - H = {r.value - H:+.4f}, off-diagonal mass of maximiser {r.off_diagonal_mass}")


if __name__ == "__main__":
    main()
