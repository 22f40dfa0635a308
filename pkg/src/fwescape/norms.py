"""Drift-norm landscapes, their extrema, and the macrospin bound formulas."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .models import D0, DriftModel, Macrospin, MaierStein, ModelError, call_kernel, critical_current

# --------------------------------------------------------------------------
# landscape


@njit(cache=True)
def _norm_and_grad(kernel, params, x):
    F, J, g2, dg2 = call_kernel(kernel, x, params)
    v = 0.0
    g = np.zeros(2)
    for i in range(2):
        v += F[i] * F[i] / g2[i]
        for j in range(2):
            g[j] += 2.0 * F[i] * J[i, j] / g2[i] - F[i] * F[i] * dg2[i, j] / (g2[i] * g2[i])
    return v, g


@njit(cache=True)
def _grid_eval(kernel, params, xs, ys):
    nx, ny = xs.shape[0], ys.shape[0]
    V = np.empty((nx, ny))
    G = np.empty((nx, ny, 2))
    x = np.empty(2)
    for i in range(nx):
        for j in range(ny):
            x[0] = xs[i]
            x[1] = ys[j]
            v, g = _norm_and_grad(kernel, params, x)
            V[i, j] = v
            G[i, j] = g
    return V, G


def _fn(model, f):
    return f if model.jitted else f.py_func


def norm_and_gradient(model: DriftModel, x):
    """|f|_G^2 and its analytic gradient at x."""
    model.evaluate(x)
    v, g = _fn(model, _norm_and_grad)(model.jit_kernel, model.params, np.asarray(x, dtype=float))
    return float(v), np.asarray(g)


def norm_hessian(model: DriftModel, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of the analytic gradient."""
    x = np.asarray(x, dtype=float)
    H = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        H[:, j] = (norm_and_gradient(model, x + e)[1] - norm_and_gradient(model, x - e)[1]) / (2 * h)
    return 0.5 * (H + H.T)


@dataclass
class GridSpec:
    bounds: tuple  # ((x_lo, x_hi), (y_lo, y_hi)) in chart coordinates
    resolution: tuple = (512, 512)

    def axes(self):
        (a, b), (c, d) = self.bounds
        return np.linspace(a, b, self.resolution[0]), np.linspace(c, d, self.resolution[1])


@dataclass
class Extremum:
    x: np.ndarray
    kind: str  # 'min', 'max' or 'saddle'
    value: float
    eigenvalues: np.ndarray
    grad_norm: float
    refined: bool = True
    degenerate: bool = False


@dataclass(eq=False)
class NormLandscape:
    model: DriftModel
    grid: GridSpec
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # |f|_G^2, shape (nx, ny)
    gradient: np.ndarray  # (nx, ny, 2)
    terms: dict = field(default_factory=dict)  # macrospin decomposition, keyed by name
    extrema: list = field(default_factory=list)


def default_grid(model: DriftModel, resolution=(512, 512)) -> GridSpec:
    if isinstance(model, Macrospin):
        return GridSpec(((0.01, math.pi - 0.01), (-math.pi, math.pi)), resolution)
    return GridSpec(((-0.25, 1.25), (-0.75, 0.75)), resolution)


def norm_grid(model: DriftModel, grid: GridSpec | None = None) -> NormLandscape:
    """|f|_G^2 on a uniform chart grid.

    For the macrospin the nodes also carry the embedded magnetisation and the
    two leading terms of |A|^2: the precession term |m x h|^2 and the
    current term 2 alpha I n_p.(m x h).
    """
    grid = grid or default_grid(model)
    xs, ys = grid.axes()
    if isinstance(model, Macrospin):
        s = np.abs(np.sin(xs))
        if s.min() < 1e-4:
            raise ModelError("grid touches the chart pole")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ModelError("non-finite grid")
    V, G = _fn(model, _grid_eval)(model.jit_kernel, model.params, xs, ys)
    land = NormLandscape(model, grid, xs, ys, V, G)
    if isinstance(model, Macrospin):
        Q = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
        m = model.to_sphere(Q)
        h = np.stack([-model.D * m[..., 0], np.zeros(m.shape[:2]), m[..., 2]], -1)
        mh = np.cross(m, h)
        land.terms = {
            "m": m,
            "precession": np.sum(mh * mh, -1),
            "current": 2 * model.alpha * model.I * (mh @ model.n_p),
        }
    return land


# --------------------------------------------------------------------------
# extrema


def refine_extremum(model, x0, tol=1e-12, max_iter=50, h=1e-5):
    """Newton iteration on grad |f|^2 = 0. Returns (x, converged)."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        _, g = norm_and_gradient(model, x)
        if np.linalg.norm(g) <= tol:
            return x, True
        H = norm_hessian(model, x, h)
        try:
            dx = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return x, False
        x = x - dx
        if not np.all(np.isfinite(x)) or np.linalg.norm(dx) > 1.0:
            return np.asarray(x0, dtype=float), False
        if np.linalg.norm(dx) < 1e-15:
            break
    _, g = norm_and_gradient(model, x)
    return x, bool(np.linalg.norm(g) <= 1e-8)


def classify(model, x, h=1e-5, degenerate_tol=1e-8):
    v, g = norm_and_gradient(model, x)
    lam = np.linalg.eigvalsh(norm_hessian(model, x, h))
    degenerate = bool(np.any(np.abs(lam) < degenerate_tol))
    if lam[0] > 0:
        kind = "min"
    elif lam[1] < 0:
        kind = "max"
    else:
        kind = "saddle"
    return kind, v, lam, float(np.linalg.norm(g)), degenerate


def _candidate_cells(G):
    """Cells whose corners see sign changes in both gradient components."""
    out = []
    for c in range(2):
        s = np.sign(G[..., c])
        lo = np.minimum(np.minimum(s[:-1, :-1], s[1:, :-1]), np.minimum(s[:-1, 1:], s[1:, 1:]))
        hi = np.maximum(np.maximum(s[:-1, :-1], s[1:, :-1]), np.maximum(s[:-1, 1:], s[1:, 1:]))
        out.append((lo <= 0) & (hi >= 0))
    return np.argwhere(out[0] & out[1])


def find_and_classify_extrema(land: NormLandscape, merge_tol=1e-6, h=1e-5) -> list:
    """Refine grid-level critical points of |f|^2 and classify them."""
    model = land.model
    (a, b), (c, d) = land.grid.bounds
    found = []
    for i, j in _candidate_cells(land.gradient):
        x0 = np.array([0.5 * (land.xs[i] + land.xs[i + 1]), 0.5 * (land.ys[j] + land.ys[j + 1])])
        try:
            x, ok = refine_extremum(model, x0, h=h)
        except ModelError:
            x, ok = x0, False
        if ok and not (a <= x[0] <= b and c <= x[1] <= d):
            continue
        if any(np.linalg.norm(x - e.x) < merge_tol for e in found):
            continue
        kind, v, lam, gn, deg = classify(model, x, h)
        found.append(Extremum(x, kind, v, lam, gn, ok, deg))
    found.sort(key=lambda e: (e.x[0], e.x[1]))
    land.extrema = found
    return found


# --------------------------------------------------------------------------
# bifurcation scan


@dataclass
class BifurcationResult:
    params: np.ndarray
    locations: np.ndarray
    kinds: list
    transverse: np.ndarray  # largest Hessian eigenvalue at the tracked point
    found: bool
    bracket: tuple | None = None
    threshold: float | None = None


def bifurcation_scan(family=MaierStein, param_range=(3.0, 5.0), steps: int = 21,
                     track=(1 / math.sqrt(3), 0.0), tol: float = 1e-8) -> BifurcationResult:
    """Track a critical point of |f|^2 across a parameter range.

    The point is followed by Newton continuation from ``track``; the flip
    from saddle to maximum is where the largest Hessian eigenvalue crosses
    zero, located by bisection.
    """
    ps = np.linspace(param_range[0], param_range[1], steps)
    if np.any(np.diff(ps) <= 0):
        raise ValueError("parameter grid must be increasing")
    x = np.asarray(track, dtype=float)
    locs, kinds, lam = [], [], []

    def at(p, x0):
        m = family(p)
        xr, ok = refine_extremum(m, x0)
        if not ok:
            raise ModelError(f"tracked point lost at parameter {p}")
        k, _, ev, _, _ = classify(m, xr)
        return xr, k, ev[1]

    for p in ps:
        x, k, l1 = at(p, x)
        locs.append(x)
        kinds.append(k)
        lam.append(l1)
    lam = np.array(lam)
    res = BifurcationResult(ps, np.array(locs), kinds, lam, False)
    idx = np.nonzero((lam[:-1] > 0) & (lam[1:] <= 0))[0]
    if len(idx) == 0:
        return res
    k = idx[0]
    lo, hi = ps[k], ps[k + 1]
    xl = res.locations[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        xm, _, lm = at(mid, xl)
        if lm > 0:
            lo, xl = mid, xm
        else:
            hi = mid
    res.found = True
    res.bracket = (float(ps[k]), float(ps[k + 1]))
    res.threshold = 0.5 * (lo + hi)
    return res


# --------------------------------------------------------------------------
# macrospin bound formulas (full field h = -grad eps)


def precessional_min(epsilon: float, D: float) -> float:
    """Minimum of |m x h|^2 on the eps contour: 4|eps|(1 - |eps|)."""
    if not -1.0 <= epsilon < 0.0:
        raise ValueError("epsilon must lie in [-1, 0)")
    if D < 0:
        raise ValueError("D must be >= 0")
    e = abs(epsilon)
    return 4.0 * e * (1.0 - e)


def _mz_range(e, D):
    return math.sqrt(e), math.sqrt((D + e) / (D + 1.0))


def q_objective(mz, e, D, omega):
    a = np.clip(1.0 - (D + 1.0) * mz * mz / (D + e), 0.0, None)
    b = np.clip(mz * mz / e - 1.0, 0.0, None)
    return np.sqrt(a) * (np.sqrt(b) + math.tan(omega) / math.sqrt(D) * mz / math.sqrt(e))


def q_factor(epsilon: float, D: float, omega: float, tol: float = 1e-10, prescan: int = 1000) -> float:
    """Q(omega): bounded maximisation over m_z, pre-scan then golden section."""
    e = abs(epsilon)
    lo, hi = _mz_range(e, D)
    if not hi > lo:
        raise ValueError("empty m_z range")
    z = np.linspace(lo, hi, prescan)
    k = int(np.argmax(q_objective(z, e, D, omega)))
    a, b = z[max(k - 1, 0)], z[min(k + 1, prescan - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = float(q_objective(c, e, D, omega)), float(q_objective(d, e, D, omega))
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = float(q_objective(c, e, D, omega))
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = float(q_objective(d, e, D, omega))
    return max(fc, fd, float(q_objective(z[k], e, D, omega)))


def nongradient_max(epsilon: float, D: float, omega: float, alpha: float) -> float:
    """Upper bound of the current term 2 alpha I n_p.(m x h) on the eps contour, I = I_C."""
    if not -1.0 < epsilon < 0.0:
        raise ValueError("epsilon must lie in (-1, 0)")
    e = abs(epsilon)
    if D == 0:
        return 4 * alpha * math.sqrt(e * (1 - e)) * math.tan(omega)
    Q = q_factor(epsilon, D, omega)
    if D > D0:
        return 8 * alpha / math.pi * math.sqrt(D * (D + 1) * (D + e) * e) * Q
    return 2 * alpha * (D + 2) * math.sqrt((D + e) * e) * Q


def contour_points(epsilon: float, D: float, n: int = 100_000) -> np.ndarray:
    """Points of the m_z > 0 branch of eps(m) = epsilon, uniform in azimuth."""
    phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = np.sqrt((1 + epsilon) / (1 + D * np.cos(phi) ** 2))
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.clip(1 - r * r, 0, 1))], -1)


def _full_field(m, D):
    return np.stack([-2 * D * m[:, 0], np.zeros(len(m)), 2 * m[:, 2]], -1)


def precessional_min_bruteforce(epsilon, D, n=100_000) -> float:
    m = contour_points(epsilon, D, n)
    mh = np.cross(m, _full_field(m, D))
    return float(np.min(np.sum(mh * mh, -1)))


def nongradient_max_bruteforce(epsilon, D, omega, alpha, n=100_000) -> float:
    m = contour_points(epsilon, D, n)
    mh = np.cross(m, _full_field(m, D))
    npol = np.array([math.sin(omega), 0.0, math.cos(omega)])
    return float(np.max(2 * alpha * critical_current(D, omega) * (mh @ npol)))


@dataclass
class AdmissibilityBand:
    D: float
    omega: float
    alpha: float
    intervals: list  # disjoint (lo, hi) ranges of |eps|
    regime: str  # 'small_tilt' or 'large_tilt'

    @property
    def eps_lo(self):
        return self.intervals[0][0] if self.intervals else None

    @property
    def eps_hi(self):
        return self.intervals[-1][1] if self.intervals else None

    @property
    def empty(self) -> bool:
        return not self.intervals

    def contains(self, abs_eps: float) -> bool:
        return any(lo < abs_eps < hi for lo, hi in self.intervals)

    def excluded(self) -> list:
        """Complement of the band in (0, 1): where the bound analysis breaks down."""
        out, prev = [], 0.0
        for lo, hi in self.intervals:
            if lo > prev:
                out.append((prev, lo))
            prev = hi
        if prev < 1.0:
            out.append((prev, 1.0))
        return out


def _interval(w):
    return [(w, 1.0 - w)] if w < 0.5 else []


def admissibility_band(D: float, omega: float, alpha: float, threshold: float = 0.1) -> AdmissibilityBand:
    """Range of |eps| where the precession term is taken to dominate.

    D = 0: a^2 tan^2 w < |eps| < 1 - a^2 tan^2 w; D > D0: D a tan w < |eps| <
    1 - D a tan w; 0 < D < D0 uses the D > D0 rule for |eps| < D and the D = 0
    rule for |eps| > D. Large tilts (a tan w > threshold) give an empty band;
    a tan w equal to the threshold still counts as small.
    """
    t = abs(math.tan(omega))
    if alpha * t > threshold * (1 + 1e-12):
        return AdmissibilityBand(D, omega, alpha, [], "large_tilt")
    w0 = (alpha * t) ** 2
    wD = D * alpha * t
    if D == 0:
        iv = _interval(w0)
    elif D > D0:
        iv = _interval(wD)
    else:
        iv = []
        for lo, hi in _interval(wD):
            lo, hi = lo, min(hi, D)
            if hi > lo:
                iv.append((lo, hi))
        for lo, hi in _interval(w0):
            lo = max(lo, D)
            if hi > lo:
                iv.append((lo, hi))
        merged = []
        for lo, hi in sorted(iv):
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
            else:
                merged.append((lo, hi))
        iv = merged
    return AdmissibilityBand(D, omega, alpha, iv, "small_tilt")


def domination_margin(abs_eps: float, D: float, omega: float, alpha: float) -> float:
    return precessional_min(-abs_eps, D) - nongradient_max(-abs_eps, D, omega, alpha)


def domination_interval(D: float, omega: float, alpha: float, n: int = 2000) -> list:
    """|eps| ranges where precessional_min > nongradient_max, found numerically."""
    from scipy.optimize import brentq

    es = np.linspace(1e-6, 1 - 1e-6, n)
    m = np.array([domination_margin(e, D, omega, alpha) for e in es])
    out, start = [], None
    for k in range(n):
        if m[k] > 0 and start is None:
            start = es[0] if k == 0 else brentq(domination_margin, es[k - 1], es[k], args=(D, omega, alpha))
        if m[k] <= 0 and start is not None:
            out.append((float(start), float(brentq(domination_margin, es[k - 1], es[k], args=(D, omega, alpha)))))
            start = None
    if start is not None:
        out.append((float(start), float(es[-1])))
    return out
