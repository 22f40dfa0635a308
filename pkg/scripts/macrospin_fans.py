"""Biaxial macrospin escape fans for a few polarizer tilts.

Tilts and drive are given as fractions of the separatrix angle and of the
critical current.
"""
import argparse
import os

from fwescape import io
from fwescape.instanton import ShootingConfig, detect_crossings, fan_shoot
from fwescape.models import Macrospin


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--D", type=float, default=20.0)
    ap.add_argument("--alpha", type=float, default=0.01)
    ap.add_argument("--current", type=float, default=0.8)
    ap.add_argument("--tilts", type=float, nargs="+", default=[0.0, 0.1, 0.25])
    ap.add_argument("--fan", type=int, default=8)
    ap.add_argument("--out", default="out/macrospin")
    a = ap.parse_args()
    for w in a.tilts:
        m = Macrospin.from_ratios(a.alpha, a.D, a.current, w)
        fan = fan_shoot(m, None, ShootingConfig(fan_size=a.fan))
        rep = detect_crossings(fan, model=m)
        d = os.path.join(a.out, f"tilt_{w:g}")
        for tr in fan:
            io.write_trajectory(os.path.join(d, f"fan_{tr.seed_index:03d}.csv"), tr)
        reasons = sorted({tr.stop_reason for tr in fan})
        acts = [tr.action for tr in fan]
        print(f"tilt={w:g}: {len(fan)} paths, stops={reasons}, crossings={len(rep)}, "
              f"S in [{min(acts):.6g}, {max(acts):.6g}]")


if __name__ == "__main__":
    main()
