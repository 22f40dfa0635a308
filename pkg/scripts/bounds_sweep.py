"""Macrospin norm bounds over a (D, eps, omega) sweep, with the admissibility bands.

Prints the worst relative disagreement with the contour brute force and, per
(D, omega), the part of the band where the precession minimum does not
dominate the current term.
"""
import argparse
import itertools

from fwescape.norms import (admissibility_band, domination_interval, nongradient_max, nongradient_max_bruteforce,
                            precessional_min, precessional_min_bruteforce)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=0.01)
    ap.add_argument("--D", type=float, nargs="+", default=[0.0, 0.5, 3.0, 20.0, 50.0])
    ap.add_argument("--eps", type=float, nargs="+", default=[-0.05, -0.2, -0.5, -0.8, -0.95])
    ap.add_argument("--omega", type=float, nargs="+", default=[0.0, 0.05, 0.2, 0.6])
    a = ap.parse_args()
    worst = 0.0
    for D, e, w in itertools.product(a.D, a.eps, a.omega):
        p, pb = precessional_min(e, D), precessional_min_bruteforce(e, D)
        q, qb = nongradient_max(e, D, w, a.alpha), nongradient_max_bruteforce(e, D, w, a.alpha)
        worst = max(worst, abs(p - pb) / max(abs(pb), 1e-300), abs(q - qb) / max(abs(qb), 1e-12))
    print(f"worst relative disagreement with brute force: {worst:.3g}")
    for D, w in itertools.product(a.D, a.omega):
        band = admissibility_band(D, w, a.alpha)
        dom = domination_interval(D, w, a.alpha)
        print(f"D={D:g} omega={w:g}: band={band.intervals} ({band.regime}), domination={dom}")


if __name__ == "__main__":
    main()
