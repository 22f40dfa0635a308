"""Acceptance criteria: each check returns measured values next to its tolerances.

Tolerances live in ``TOLERANCES`` and may be overridden per run (used to
confirm that a tightened tolerance makes the named criterion fail).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fwcore import ClosedCurve, lorentz_residual, loop_action_in_time, loop_decomposition
from .instanton import (ShootingConfig, analytic_uniaxial_action, compare_to_oracle, detect_crossings,
                        fan_shoot, optimal_escape)
from .models import DoubleWell, Macrospin, MaierStein
from .norms import (admissibility_band, bifurcation_scan, default_grid, domination_margin,
                    find_and_classify_extrema, nongradient_max, nongradient_max_bruteforce, norm_grid,
                    precessional_min, precessional_min_bruteforce)

TOLERANCES = {
    "c1.max_abs_y": 1e-3,
    "c1.saddle_x": 1e-6,
    "c1.runtime": 60.0,
    "c2.mirror_dS": 1e-6,
    "c2.min_crossings": 1,
    "c2.runtime": 120.0,
    "c3.threshold": 0.05,
    "c3.runtime": 60.0,
    "c4.oracle_rms": 1e-2,
    "c4.action_rel": 1e-4,
    "c4.runtime": 60.0,
    "c5.oracle_rms": 5e-2,
    "c5.runtime": 60.0,
    "c6.max_crossings": 0,
    "c6.runtime": 300.0,
    "c7.energy": 1e-8,
    "c7.speed": 1e-6,
    "c7.lorentz": 1e-4,
    "c8.action_rel": 1e-4,
    "c8.antiparallel": 1e-6,
    "c8.runtime": 10.0,
    "c9.agreement": 1e-6,
    "c9.flux_alpha1": 1e-10,
    "c9.runtime": 30.0,
    "c10.oracle_rel": 1e-3,
    "c10.min_points": 100,
    "c10.runtime": 120.0,
    "c11.confidence": 0.95,
    "c11.min_escapes": 500,
    "c11.runtime": 600.0,
}

NAMES = {
    1: "Maier-Stein alpha=3: on-axis optimum and single on-axis saddle",
    2: "Maier-Stein alpha=5: mirror optima and on-axis caustic crossing",
    3: "Bifurcation threshold at alpha = 4",
    4: "Uniaxial macrospin against the closed-form trajectory and action",
    5: "Tilted uniaxial macrospin with the effective-current correction",
    6: "Biaxial D=20 fans: no crossings, exit at the separatrix",
    7: "Invariant suite on all accepted trajectories",
    8: "Gradient double-well identity",
    9: "Loop decomposition against time-domain loop action",
    10: "Bound formulas against contour brute force, and domination in the band",
    11: "Langevin exit distribution at x = 0.5 (bimodal vs unimodal)",
}

# Langevin protocol: realizations per alpha at eps_noise = 0.05
LANGEVIN_REALIZATIONS = {5.0: 500, 3.0: 500}


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    measured: dict
    tolerance: dict
    runtime: float
    note: str = ""
    checks: dict = field(default_factory=dict)

    def line(self) -> str:
        bad = [k for k, v in self.checks.items() if not v]
        status = "PASS" if self.passed else "FAIL"
        tail = f" failed: {', '.join(bad)}" if bad else ""
        return f"[{status}] criterion {self.id}: {self.name} ({self.runtime:.1f} s){tail}"


# --------------------------------------------------------------------------
# shared runs (criterion 7 re-inspects the trajectories of 1-6)


@lru_cache(maxsize=None)
def _ms_optimal(alpha):
    t = time.perf_counter()
    res = optimal_escape(MaierStein(alpha), np.array([1.0, 0.0]), ShootingConfig(fan_size=16))
    return res, time.perf_counter() - t


@lru_cache(maxsize=None)
def _ms_fan(alpha, fan_size=32):
    t = time.perf_counter()
    m = MaierStein(alpha)
    fan = fan_shoot(m, np.array([1.0, 0.0]), ShootingConfig(fan_size=fan_size))
    rep = detect_crossings(fan, model=m)
    return fan, rep, time.perf_counter() - t


@lru_cache(maxsize=None)
def _macro_fan(D, current_ratio, omega_ratio, fan_size, alpha=0.01):
    t = time.perf_counter()
    m = Macrospin.from_ratios(alpha, D, current_ratio, omega_ratio)
    fan = fan_shoot(m, None, ShootingConfig(fan_size=fan_size))
    rep = detect_crossings(fan, model=m)
    return m, fan, rep, time.perf_counter() - t


def _tol(tol, key):
    return tol.get(key, TOLERANCES[key])


def _result(cid, checks, measured, tol, keys, runtime, note=""):
    return CriterionResult(cid, NAMES[cid], all(checks.values()), measured,
                           {k: _tol(tol, k) for k in keys}, runtime, note, checks)


# --------------------------------------------------------------------------
# criteria


def criterion_1(tol):
    res, t_shoot = _ms_optimal(3.0)
    t = time.perf_counter()
    land = norm_grid(MaierStein(3.0))
    ext = find_and_classify_extrema(land)
    rt = t_shoot + time.perf_counter() - t
    max_y = max(float(np.max(np.abs(tr.x[:, 1]))) for tr in res.optimal)
    on_axis = [e for e in ext if abs(e.x[1]) < 1e-8]
    saddles = [e for e in on_axis if e.kind == "saddle" and 0 < e.x[0] < 1]
    mins = [e for e in on_axis if e.kind == "min"]
    has_min = all(any(np.linalg.norm(e.x - p) < 1e-6 for e in mins) for p in ([0, 0], [1, 0]))
    sx = float(saddles[0].x[0]) if len(saddles) == 1 else math.nan
    checks = {
        "max_abs_y": max_y <= _tol(tol, "c1.max_abs_y"),
        "one_saddle": len(saddles) == 1,
        "minima_at_fixed_points": has_min,
        "saddle_x": abs(sx - 1 / math.sqrt(3)) <= _tol(tol, "c1.saddle_x"),
        "runtime": rt < _tol(tol, "c1.runtime"),
    }
    meas = {"max_abs_y": max_y, "action": res.optimal[0].action, "n_saddles_on_axis": len(saddles),
            "saddle_x": sx, "saddle_x_error": abs(sx - 1 / math.sqrt(3))}
    return _result(1, checks, meas, tol, ["c1.max_abs_y", "c1.saddle_x", "c1.runtime"], rt)


def criterion_2(tol):
    res, t1 = _ms_optimal(5.0)
    fan, rep, t2 = _ms_fan(5.0)
    rt = t1 + t2
    opt = res.optimal
    ys = [float(tr.x[np.argmax(np.abs(tr.x[:, 1])), 1]) for tr in opt]
    mirror = len(opt) == 2 and ys[0] * ys[1] < 0
    dS = abs(opt[0].action - opt[1].action) if len(opt) >= 2 else math.inf
    on_axis = [c for c in rep.crossings if 0 < c.point[0] < 1 and abs(c.point[1]) <= rep.match_tol]
    checks = {
        "two_off_axis_optima": mirror and min(abs(y) for y in ys) > 1e-2,
        "mirror_dS": dS <= _tol(tol, "c2.mirror_dS"),
        "axis_crossing": len(on_axis) >= _tol(tol, "c2.min_crossings"),
        "runtime": rt < _tol(tol, "c2.runtime"),
    }
    meas = {"actions": [tr.action for tr in opt], "peak_y": ys, "mirror_dS": dS,
            "axis_crossings": len(on_axis), "crossing_x": [float(c.point[0]) for c in on_axis],
            "total_crossings": len(rep), "momentum_tol": rep.momentum_tol}
    return _result(2, checks, meas, tol, ["c2.mirror_dS", "c2.min_crossings", "c2.runtime"], rt)


def hessian_sign_oracle() -> float:
    """Parameter where d2|f|^2/dy2 vanishes at (1/sqrt3, 0): (1+x^2)^2 / (2 x^2 (1-x^2))."""
    x2 = 1.0 / 3.0
    return (1 + x2) ** 2 / (2 * x2 * (1 - x2))


def criterion_3(tol):
    t = time.perf_counter()
    r = bifurcation_scan(param_range=(3.0, 5.0), steps=41)
    r2 = bifurcation_scan(param_range=(1.0, 2.0), steps=11)
    rt = time.perf_counter() - t
    oracle = hessian_sign_oracle()
    thr = r.threshold if r.found else math.nan
    checks = {
        "found": r.found,
        "threshold": abs(thr - 4.0) <= _tol(tol, "c3.threshold"),
        "oracle": abs(thr - oracle) <= _tol(tol, "c3.threshold"),
        "none_in_1_2": not r2.found,
        "runtime": rt < _tol(tol, "c3.runtime"),
    }
    meas = {"threshold": thr, "oracle": oracle, "bracket": r.bracket, "found_in_1_2": r2.found}
    return _result(3, checks, meas, tol, ["c3.threshold", "c3.runtime"], rt)


def criterion_4(tol):
    m, fan, rep, rt = _macro_fan(0.0, 0.3, 0.0, 4)
    rms, rel = [], []
    for tr in fan:
        rms.append(compare_to_oracle(tr, m.alpha, m.I).rms)
        S_exact = analytic_uniaxial_action(math.acos(-m.I), m.alpha, m.I)
        rel.append(abs(tr.action - S_exact) / S_exact)
    checks = {
        "oracle_rms": max(rms) <= _tol(tol, "c4.oracle_rms"),
        "action": max(rel) <= _tol(tol, "c4.action_rel"),
        "separatrix": all(tr.stop_reason == "separatrix" for tr in fan),
        "runtime": rt < _tol(tol, "c4.runtime"),
    }
    meas = {"oracle_rms": rms, "action_rel_err": rel, "action": [tr.action for tr in fan],
            "action_exact": m.alpha * (1 + m.I) ** 2}
    return _result(4, checks, meas, tol, ["c4.oracle_rms", "c4.action_rel", "c4.runtime"], rt)


def criterion_5(tol):
    m, fan, rep, rt = _macro_fan(0.0, 0.3, 0.3, 4)
    reps = [compare_to_oracle(tr, m.alpha, m.I, effective=True) for tr in fan]
    rms = [r.rms for r in reps]
    checks = {
        "oracle_rms": max(rms) <= _tol(tol, "c5.oracle_rms"),
        "runtime": rt < _tol(tol, "c5.runtime"),
    }
    meas = {"oracle_rms": rms, "oracle_rms_pointwise": [r.rms_raw for r in reps],
            "I_effective": reps[0].I_used, "omega": m.omega}
    note = "headline RMS averages the residual over one precession turn; pointwise RMS reported alongside"
    return _result(5, checks, meas, tol, ["c5.oracle_rms", "c5.runtime"], rt, note)


def criterion_6(tol):
    runs = [_macro_fan(20.0, 0.8, w, 8) for w in (0.0, 0.1, 0.25)]
    rt = sum(r[3] for r in runs)
    counts = [len(r[2]) for r in runs]
    reasons = [sorted({tr.stop_reason for tr in r[1]}) for r in runs]
    checks = {
        "no_crossings": all(c <= _tol(tol, "c6.max_crossings") for c in counts),
        "separatrix_exit": all(rs == ["separatrix"] for rs in reasons),
        "fan_size": all(len(r[1]) >= 8 for r in runs),
        "runtime": rt < _tol(tol, "c6.runtime"),
    }
    meas = {"crossings": counts, "stop_reasons": reasons, "fan_sizes": [len(r[1]) for r in runs],
            "actions": [[tr.action for tr in r[1]] for r in runs]}
    return _result(6, checks, meas, tol, ["c6.max_crossings", "c6.runtime"], rt)


def _accepted_trajectories():
    out = []
    for a in (3.0, 5.0):
        res, _ = _ms_optimal(a)
        out += [(MaierStein(a), tr) for tr in res.optimal]
    fan, _, _ = _ms_fan(5.0)
    out += [(MaierStein(5.0), tr) for tr in fan]
    for key in ((0.0, 0.3, 0.0, 4), (0.0, 0.3, 0.3, 4)) + tuple((20.0, 0.8, w, 8) for w in (0.0, 0.1, 0.25)):
        m, fan, _, _ = _macro_fan(*key)
        out += [(m, tr) for tr in fan]
    return out


def criterion_7(tol, lorentz_points: int = 300):
    t = time.perf_counter()
    trs = _accepted_trajectories()
    e = [tr.meta["energy_residual"] for _, tr in trs]
    s = [tr.meta["speed_residual"] for _, tr in trs]
    lz = [lorentz_residual(tr, m, stride=max(1, len(tr) // lorentz_points)) for m, tr in trs]
    rt = time.perf_counter() - t
    checks = {
        "energy": max(e) <= _tol(tol, "c7.energy"),
        "speed": max(s) <= _tol(tol, "c7.speed"),
        "lorentz": max(lz) <= _tol(tol, "c7.lorentz"),
    }
    meas = {"n_trajectories": len(trs), "max_energy_residual": max(e), "max_speed_residual": max(s),
            "max_lorentz_residual": max(lz)}
    return _result(7, checks, meas, tol, ["c7.energy", "c7.speed", "c7.lorentz"], rt)


def criterion_8(tol):
    t = time.perf_counter()
    m = DoubleWell()
    res = optimal_escape(m, np.array([1.0, 0.0]), ShootingConfig(fan_size=16), scan_size=64)
    tr = res.optimal[0]
    # every zero-energy path leaving a gradient minimum is a reversed relaxation path
    fan = fan_shoot(m, np.array([1.0, 0.0]), ShootingConfig(fan_size=8))
    rt = time.perf_counter() - t
    rel = abs(tr.action - 0.5) / 0.5
    worst = 0.0
    for path in [tr] + fan:
        F = path.x.copy()
        F[:, 0] = -path.x[:, 0] * (path.x[:, 0] ** 2 - 1)
        F[:, 1] = -path.x[:, 1]
        V = path.p + F  # unit metric
        nF, nV = np.linalg.norm(F, axis=1), np.linalg.norm(V, axis=1)
        ok = (nF > 1e-12) & (nV > 1e-12)
        worst = max(worst, float(np.max(1.0 + np.sum(V[ok] * F[ok], 1) / (nF[ok] * nV[ok]))))
    checks = {
        "action": rel <= _tol(tol, "c8.action_rel"),
        "antiparallel": worst <= _tol(tol, "c8.antiparallel"),
        "runtime": rt < _tol(tol, "c8.runtime"),
    }
    meas = {"action": tr.action, "action_rel_err": rel, "max_one_plus_cos": worst, "paths_checked": 1 + len(fan)}
    return _result(8, checks, meas, tol, ["c8.action_rel", "c8.antiparallel", "c8.runtime"], rt)


def random_loops(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = (rng.uniform(0.2, 0.8), rng.uniform(-0.4, 0.4))
        a, b = rng.uniform(0.05, 0.15, 2)
        out.append(ClosedCurve.ellipse(c, a, b, rng.uniform(0, np.pi)))
    return out


def criterion_9(tol, n_loops: int = 20):
    t = time.perf_counter()
    loops = random_loops(n_loops, seed=9)
    worst = {}
    flux1 = 0.0
    for a in (1.0, 3.0, 5.0):
        m = MaierStein(a)
        w = 0.0
        for lp in loops:
            terms = loop_decomposition(lp, m)
            S_t = loop_action_in_time(lp, m)
            w = max(w, abs(terms.total - S_t) / max(abs(S_t), 1e-300))
            if a == 1.0:
                flux1 = max(flux1, abs(terms.flux))
        worst[a] = w
    rt = time.perf_counter() - t
    checks = {
        "agreement": max(worst.values()) <= _tol(tol, "c9.agreement"),
        "flux_alpha1": flux1 <= _tol(tol, "c9.flux_alpha1"),
        "runtime": rt < _tol(tol, "c9.runtime"),
    }
    meas = {"max_rel_disagreement": {str(k): v for k, v in worst.items()}, "max_flux_alpha1": flux1,
            "loops_per_alpha": n_loops}
    return _result(9, checks, meas, tol, ["c9.agreement", "c9.flux_alpha1", "c9.runtime"], rt)


def bound_sweep():
    Ds = (0.0, 0.5, 3.0, 20.0, 50.0)
    eps = (-0.05, -0.2, -0.5, -0.8, -0.95)
    omegas = (0.0, 0.05, 0.2, 0.6)
    return [(D, e, w) for D in Ds for e in eps for w in omegas]


def criterion_10(tol, alpha: float = 0.01):
    t = time.perf_counter()
    pts = bound_sweep()
    err_min = err_max = 0.0
    for D, e, w in pts:
        a, b = precessional_min(e, D), precessional_min_bruteforce(e, D)
        err_min = max(err_min, abs(a - b) / abs(b))
        a, b = nongradient_max(e, D, w, alpha), nongradient_max_bruteforce(e, D, w, alpha)
        err_max = max(err_max, abs(a - b) / max(abs(b), 1e-300))
    violations = []
    for D in sorted({p[0] for p in pts}):
        for w in sorted({p[2] for p in pts}):
            band = admissibility_band(D, w, alpha)
            for lo, hi in band.intervals:
                for ae in np.linspace(lo, hi, 202)[1:-1]:
                    mg = domination_margin(ae, D, w, alpha)
                    if mg <= 0:
                        violations.append((D, w, float(ae), float(mg)))
    rt = time.perf_counter() - t
    bad_sets = sorted({(v[0], v[1]) for v in violations})
    checks = {
        "sweep_size": len(pts) >= _tol(tol, "c10.min_points"),
        "precessional_oracle": err_min <= _tol(tol, "c10.oracle_rel"),
        "nongradient_oracle": err_max <= _tol(tol, "c10.oracle_rel"),
        "domination_in_band": not violations,
        "runtime": rt < _tol(tol, "c10.runtime"),
    }
    meas = {"n_points": len(pts), "max_rel_err_precessional": err_min, "max_rel_err_nongradient": err_max,
            "alpha": alpha, "band_violations": len(violations),
            "violating_D_omega": [list(b) for b in bad_sets],
            "largest_violating_abs_eps": {f"D={d},omega={w}": max(v[2] for v in violations if (v[0], v[1]) == (d, w))
                                          for d, w in bad_sets}}
    note = ("min > max fails near the band edges where the precession bound vanishes linearly in |eps| "
            "while the non-gradient bound vanishes like sqrt|eps|") if violations else ""
    return _result(10, checks, meas, tol, ["c10.oracle_rel", "c10.min_points", "c10.runtime"], rt, note)


def criterion_11(tol, realizations=None, seed: int = 2024):
    from .langevin import SimConfig, bimodality, simulate_escapes

    realizations = realizations or LANGEVIN_REALIZATIONS
    t = time.perf_counter()
    stats = {}
    for a in (5.0, 3.0):
        run = simulate_escapes(MaierStein(a), SimConfig(eps_noise=0.05, n_realizations=realizations[a], seed=seed))
        v = run.section_values()
        stats[a] = {**bimodality(v, 1 - _tol(tol, "c11.confidence")), **run.summary()}
    rt = time.perf_counter() - t
    s5, s3 = stats[5.0], stats[3.0]
    checks = {
        "escapes": min(s5["n"], s3["n"]) >= _tol(tol, "c11.min_escapes"),
        "alpha5_bimodal": s5["bimodal"],
        "alpha3_unimodal": not s3["bimodal"],
        "alpha3_centered": abs(s3["mean"]) <= 2 * s3["mean_se"],
        "runtime": rt < _tol(tol, "c11.runtime"),
    }
    meas = {"alpha5": s5, "alpha3": s3, "eps_noise": 0.05, "h": SimConfig(eps_noise=0.05).h}
    return _result(11, checks, meas, tol, ["c11.confidence", "c11.min_escapes", "c11.runtime"], rt)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11}


def run_acceptance(ids=None, tolerances=None) -> list:
    tol = dict(tolerances or {})
    unknown = set(tol) - set(TOLERANCES)
    if unknown:
        raise KeyError(f"unknown tolerance keys: {sorted(unknown)}")
    out = []
    for cid in ids or sorted(CRITERIA):
        out.append(CRITERIA[cid](tol))
    return out
