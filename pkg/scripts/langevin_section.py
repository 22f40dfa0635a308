"""Maier-Stein Langevin escapes: distribution of y where paths last cross x = 0.5."""
import argparse

import numpy as np

from fwescape.langevin import SimConfig, bimodality, simulate_escapes
from fwescape.models import MaierStein


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, nargs="+", default=[3.0, 5.0])
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("-n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    for alpha in a.alpha:
        run = simulate_escapes(MaierStein(alpha), SimConfig(eps_noise=a.eps, n_realizations=a.n, seed=a.seed))
        y = run.section_values()
        st = bimodality(y)
        hist, edges = np.histogram(y, bins=24, range=(-0.6, 0.6))
        print(f"alpha={alpha:g}: {run.summary()}")
        print(f"    dip p={st['p_value']:.3g} mean={st['mean']:.3g}+-{st['mean_se']:.2g} std={st['std']:.3g}")
        print("    " + " ".join(str(h) for h in hist))


if __name__ == "__main__":
    main()
