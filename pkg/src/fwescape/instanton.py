"""Shooting of zero-energy trajectories, fan search and caustic detection.

Trajectories start a distance ``seed_radius`` from a stable fixed point on
the linearised instanton manifold ``p = Pi dx`` and are integrated with the
adaptive DOP853 loop in :mod:`fwescape.integrate` until a stop condition
fires. Crossings of trajectories with distinct momenta signal caustics.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.spatial import cKDTree

from . import integrate as ig
from .fwcore import (PhasePoint, Trajectory, diagnostics, drift_angle, gamma_of_velocity,
                     momentum_on_ellipse)
from .models import DoubleWell, DriftModel, Macrospin, MaierStein, ModelError


class TrajectoryRejected(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class StiffnessError(RuntimeError):
    pass


class FanError(RuntimeError):
    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


class OracleDomainError(ValueError):
    pass


PLANAR_EVENTS = ("target", "closest_approach", "separatrix", "box")
SPHERE_EVENTS = ("separatrix", "pole")
_CODES = {ig.STOP_TIME: "t_max", ig.STOP_ARC: "arc_length", ig.STOP_MAXSTEPS: "max_steps"}


@dataclass
class ShootingConfig:
    seed_mode: str = "eigenvector_fan"
    fan_size: int = 16
    seed_radius: float = 1e-3
    rtol: float = 1e-10
    atol: float = 1e-12
    t_max: float = 1e6
    max_arc_length: float | None = None  # None: 50 on planar models, unbounded on the sphere
    energy_tol: float = 1e-8
    separatrix_tol: float = 1e-4
    target: tuple | None = None  # planar exit point; None uses the model's saddle
    target_tol: float = 1e-4
    pole_tol: float = 1e-4
    box: float = 3.0
    gamma_band: float = 0.05
    match_tol: float = 1e-3
    momentum_tol: float | None = None  # None: 1e-2 * max |f| over the run
    threads: int = 1

    def __post_init__(self):
        if self.seed_mode not in ("eigenvector_fan", "gamma_fan"):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")
        if int(self.fan_size) < 1:
            raise ValueError("fan_size must be >= 1")
        if not self.seed_radius > 0:
            raise ValueError("seed_radius must be > 0")
        for name in ("rtol", "atol"):
            v = getattr(self, name)
            if not 0 < v < 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


# --------------------------------------------------------------------------
# linearisation and seeding


@dataclass
class Linearization:
    x: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    Pi: np.ndarray  # Hessian of the local quasi-potential
    unstable: np.ndarray  # 4 x 2 real basis of the linear instanton subspace
    defective: bool
    method: str  # 'eigen' or 'lyapunov'


def linearize_fixed_point(model: DriftModel, x_S, fp_tol: float = 1e-10) -> Linearization:
    """Eigenstructure of the Hamiltonian flow linearised at (x_S, p = 0)."""
    x_S = np.asarray(x_S, dtype=float)
    F, J, g2, _ = model.evaluate(x_S)
    if np.linalg.norm(F) > fp_tol:
        raise ModelError(f"|F(x_S)| = {np.linalg.norm(F):.3g} > {fp_tol}: not a fixed point")
    G0 = np.diag(g2)
    M = np.block([[J, G0], [np.zeros((2, 2)), -J.T]])
    w, V = np.linalg.eig(M)
    order = np.argsort(w.real)
    w, V = w[order], V[:, order]
    defective = bool(np.linalg.cond(V) > 1e10)

    cols = []
    done = set()
    for k in np.nonzero(w.real > 0)[0]:
        if k in done:
            continue
        if abs(w[k].imag) > 1e-12 * max(1.0, abs(w[k])):
            cols += [V[:, k].real, V[:, k].imag]
            done.add(k)
            done.update(j for j in range(4) if abs(w[j] - np.conj(w[k])) < 1e-10 * max(1.0, abs(w[k])))
        else:
            cols.append(V[:, k].real)
            done.add(k)
    U = np.array(cols).T if cols else np.zeros((4, 0))

    Pi, method = None, "eigen"
    if not defective and U.shape[1] == 2 and np.linalg.cond(U[:2]) < 1e10:
        Pi = U[2:] @ np.linalg.inv(U[:2])
        Pi = 0.5 * (Pi + Pi.T)
    if Pi is None or np.any(np.linalg.eigvalsh(Pi) <= 0):
        # quasi-potential Hessian from J X + X J^T + G = 0, Pi = X^-1
        X = solve_continuous_lyapunov(J, -G0)
        Pi = np.linalg.inv(0.5 * (X + X.T))
        method = "lyapunov"
    return Linearization(x_S, w, V, Pi, U, defective, method)


def _rescale_momentum(x, p, model):
    """Scale p so that H(x, p) = 0; keeps the direction of p."""
    F, _, g2, _ = model.evaluate(x)
    pGp = float(np.sum(g2 * p * p))
    pF = float(p @ F)
    if pGp == 0.0 or pF >= 0.0:
        raise ModelError("seed momentum cannot be rescaled onto H = 0")
    return p * (-2.0 * pF / pGp)


def _seed_directions(lin: Linearization, delta: float, betas):
    """Points on the iso-action ellipse 1/2 dx.Pi.dx = delta^2 lam_min / 2."""
    lam, Q = np.linalg.eigh(lin.Pi)
    scale = np.sqrt(lam.min() / lam)
    return [delta * (Q @ (scale * np.array([math.cos(b), math.sin(b)]))) for b in betas]


def eigenvector_seed(model, lin: Linearization, beta: float, delta: float) -> PhasePoint:
    dx = _seed_directions(lin, delta, [beta])[0]
    x = lin.x + dx
    p = _rescale_momentum(x, lin.Pi @ dx, model)
    return PhasePoint(x, p, S=0.5 * float(dx @ lin.Pi @ dx))


def gamma_seed(model, x_S, beta: float, delta: float, band: float) -> PhasePoint:
    """Seed on the circle of radius delta moving radially outwards on the ellipse."""
    x = np.asarray(x_S, dtype=float) + delta * np.array([math.cos(beta), math.sin(beta)])
    g = gamma_of_velocity(x - x_S, x, model)
    g0 = drift_angle(x, model)
    d = (g - g0 + math.pi) % (2 * math.pi) - math.pi
    if abs(d) < band:
        g = g0 + math.copysign(band, d if d != 0 else 1.0)
    return PhasePoint(x, momentum_on_ellipse(x, g, model))


def fan_betas(n: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


def fan_seeds(model, x_S, config: ShootingConfig):
    """(seed, beta, mode) for every fan member, honouring the defect fallback."""
    betas = fan_betas(config.fan_size)
    mode = config.seed_mode
    lin = None
    if mode == "eigenvector_fan":
        lin = linearize_fixed_point(model, x_S)
        if lin.defective:
            mode = "gamma_fan"
    if mode == "eigenvector_fan":
        seeds = [eigenvector_seed(model, lin, b, config.seed_radius) for b in betas]
    else:
        seeds = [gamma_seed(model, x_S, b, config.seed_radius, config.gamma_band) for b in betas]
    return seeds, betas, mode


# --------------------------------------------------------------------------
# stop sets and single shots


def default_target(model):
    if isinstance(model, (MaierStein, DoubleWell)):
        return np.zeros(2)
    return None


def stop_set(model, config: ShootingConfig, approach_radius: float = 0.0, target_tol=None):
    """(kind, parameter vector) for the integrator's built-in stop functions."""
    if isinstance(model, Macrospin):
        sp = np.concatenate([[model.D, model.boundary_energy(), config.separatrix_tol, config.pole_tol],
                             model.R.ravel()])
        return ig.SPHERE, sp
    target = config.target if config.target is not None else default_target(model)
    tx, ty = (np.nan, np.nan) if target is None else (float(target[0]), float(target[1]))
    tol = config.target_tol if target_tol is None else target_tol
    sep = (0.0, 1.0) if isinstance(model, (MaierStein, DoubleWell)) else (-1.0, 1.0)
    return ig.PLANAR, np.array([tx, ty, tol, approach_radius, sep[0], sep[1], config.box])


def _arc_limit(model, config):
    if config.max_arc_length is not None:
        return config.max_arc_length
    return np.inf if isinstance(model, Macrospin) else 50.0


def _stop_reason(kind, code, which):
    if code == ig.STOP_EVENT:
        return (PLANAR_EVENTS if kind == ig.PLANAR else SPHERE_EVENTS)[which]
    return _CODES.get(code, f"code{code}")


def assemble_trajectory(model, ts, ys, reason, seed_index=0, meta=None) -> Trajectory:
    X = ys[:, :2]
    P = ys[:, 2:4]
    H, nf2, spd, psi, gam, V = diagnostics(model, X, P)
    traj = Trajectory(t=ts, x=X.copy(), p=P.copy(), s=ys[:, 4].copy(), S=ys[:, 5].copy(),
                      H=H, psi=psi, gamma=gam, stop_reason=reason, seed_index=seed_index,
                      meta=dict(meta or {}))
    nf = np.sqrt(nf2)
    traj.meta["energy_residual"] = float(np.max(np.abs(H) / np.maximum(1.0, nf2)))
    traj.meta["speed_residual"] = float(np.max(np.abs(spd - nf) / np.maximum(1.0, nf)))
    traj.meta["max_f"] = float(nf.max())
    if isinstance(model, Macrospin):
        traj.m = model.to_sphere(X)
        th = np.arccos(np.clip(traj.m[:, 2], -1, 1))
        ph = np.unwrap(np.arctan2(traj.m[:, 1], traj.m[:, 0]))
        traj.meta.update(theta=th, phi=ph, alpha=model.alpha, D=model.D, I=model.I, omega=model.omega)
    return traj


def embedded(traj: Trajectory, model=None):
    """Configuration points and velocity-level momenta G p in embedding space."""
    if traj.m is None:
        return traj.x, traj.p * (1.0 if model is None else np.array([model.metric(x) for x in traj.x]))
    g2 = np.array([model.metric(x) for x in traj.x])
    W = g2 * traj.p
    out = np.empty((len(traj.x), 3))
    for i, (q, w) in enumerate(zip(traj.x, W)):
        out[i] = model.tangent_to_sphere(q, w)
    return traj.m, out


def shoot(model: DriftModel, seed: PhasePoint, config: ShootingConfig | None = None, *,
          stop=None, seed_index: int = 0, meta=None) -> Trajectory:
    """Integrate the Hamiltonian flow from ``seed`` until a stop condition fires."""
    config = config or ShootingConfig()
    F, _, g2, _ = model.evaluate(seed.x)
    f = F / g2
    q = seed.p + f
    H0 = 0.5 * float(np.sum(g2 * q * q) - np.sum(g2 * f * f))
    if abs(H0) > config.energy_tol * max(1.0, float(np.sum(g2 * f * f))):
        raise ValueError(f"seed energy H = {H0:.3g} exceeds tolerance")
    kind, sp = stop if stop is not None else stop_set(model, config)
    y0 = np.concatenate([seed.x, seed.p, [seed.s, seed.S]])
    ts, ys, code, which = ig.run(model, y0, t_max=config.t_max, s_max=_arc_limit(model, config),
                                 rtol=config.rtol, atol=config.atol, kind=kind, sp=sp)
    if code in (ig.STOP_UNDERFLOW, ig.STOP_NONFINITE):
        raise StiffnessError(f"step size underflow at t = {ts[-1]:.6g}, x = {ys[-1, :2]}")
    traj = assemble_trajectory(model, ts, ys, _stop_reason(kind, code, which), seed_index, meta)
    if traj.meta["energy_residual"] > config.energy_tol:
        i = int(np.argmax(np.abs(traj.H)))
        raise TrajectoryRejected(
            f"energy drift {traj.meta['energy_residual']:.3g} > {config.energy_tol}",
            {"seed_index": seed_index, "max_residual": traj.meta["energy_residual"],
             "at_t": float(traj.t[i]), "at_x": traj.x[i].tolist(), "stop_reason": traj.stop_reason})
    return traj


def _default_fixed_point(model):
    if isinstance(model, Macrospin):
        return model.stable_point()
    for x in model.fixed_points():
        J = model.jacobian(x)
        if np.all(np.linalg.eigvals(J).real < 0):
            return x
    raise ModelError("model has no known stable fixed point; pass x_S")


def fan_shoot(model: DriftModel, x_S=None, config: ShootingConfig | None = None) -> list:
    """Shoot every fan member; results are sorted by seed index."""
    config = config or ShootingConfig()
    x_S = _default_fixed_point(model) if x_S is None else np.asarray(x_S, dtype=float)
    J = model.jacobian(x_S)
    if np.any(np.linalg.eigvals(J).real >= 0):
        raise ModelError("x_S is not a stable fixed point")
    seeds, betas, mode = fan_seeds(model, x_S, config)
    stop = stop_set(model, config)

    def one(k):
        try:
            return shoot(model, seeds[k], config, stop=stop, seed_index=k,
                         meta={"beta": float(betas[k]), "seed_mode": mode})
        except (TrajectoryRejected, StiffnessError, ModelError) as exc:
            return exc

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(one, range(len(seeds))))
    else:
        results = [one(k) for k in range(len(seeds))]
    trajs = [r for r in results if isinstance(r, Trajectory)]
    if not trajs:
        diag = [{"seed_index": k, "error": repr(r), **getattr(r, "diagnostics", {})}
                for k, r in enumerate(results)]
        raise FanError("all fan seeds were rejected", diag)
    return sorted(trajs, key=lambda t: t.seed_index)


# --------------------------------------------------------------------------
# optimal escape to a planar target


@dataclass
class EscapeResult:
    optimal: list  # least-action trajectories (mirror partners included)
    candidates: list  # every refined trajectory that reached the target
    scan: np.ndarray  # (beta, miss distance) of the coarse scan


def _miss(model, lin, beta, config, radius):
    seed = eigenvector_seed(model, lin, beta, config.seed_radius)
    kind, sp = stop_set(model, config, approach_radius=radius, target_tol=0.0)
    y0 = np.concatenate([seed.x, seed.p, [0.0, seed.S]])
    ts, ys, code, which = ig.run(model, y0, t_max=config.t_max, s_max=_arc_limit(model, config),
                                 rtol=config.rtol, atol=config.atol, kind=kind, sp=sp)
    target = sp[:2]
    return float(np.min(np.linalg.norm(ys[:, :2] - target, axis=1)))


def _golden(fun, a, b, tol):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def optimal_escape(model: DriftModel, x_S=None, config: ShootingConfig | None = None,
                   approach_radius: float = 0.5, beta_tol: float = 1e-13,
                   action_tie: float = 1e-5, scan_size: int = 512) -> EscapeResult:
    """Least-action trajectories from x_S to the planar target (a saddle).

    A scan over max(fan_size, scan_size) seed angles locates local minima of
    the miss distance, which behaves like sqrt|beta - beta*| near a hit; each
    minimum is refined by golden section and re-shot with the target stop.
    """
    config = config or ShootingConfig()
    x_S = _default_fixed_point(model) if x_S is None else np.asarray(x_S, dtype=float)
    lin = linearize_fixed_point(model, x_S)
    betas = fan_betas(max(config.fan_size, scan_size))
    miss = np.array([_miss(model, lin, b, config, approach_radius) for b in betas])
    n = len(betas)
    step = 2 * np.pi / n
    cands = []
    stop = stop_set(model, config)
    for k in range(n):
        if miss[k] <= miss[(k - 1) % n] and miss[k] <= miss[(k + 1) % n]:
            b, r = _golden(lambda b: _miss(model, lin, b, config, approach_radius),
                           betas[k] - step, betas[k] + step, beta_tol)
            seed = eigenvector_seed(model, lin, b, config.seed_radius)
            traj = shoot(model, seed, config, stop=stop, seed_index=k,
                         meta={"beta": float(b % (2 * np.pi)), "miss": r})
            if traj.stop_reason == "target":
                cands.append(traj)
    if not cands:
        raise FanError("no refined trajectory reached the target",
                       [{"beta": float(b), "miss": float(m)} for b, m in zip(betas, miss)])
    cands.sort(key=lambda t: t.action)
    smin = cands[0].action
    optimal = [t for t in cands if t.action - smin <= action_tie * max(1.0, abs(smin))]
    return EscapeResult(optimal, cands, np.column_stack([betas, miss]))


# --------------------------------------------------------------------------
# crossings


@dataclass
class Crossing:
    i: int
    j: int
    point: np.ndarray
    mismatch: float
    distance: float
    index_i: int
    index_j: int


@dataclass
class CrossingReport:
    crossings: list = field(default_factory=list)
    match_tol: float = 1e-3
    momentum_tol: float = 0.0

    def __len__(self):
        return len(self.crossings)

    @property
    def pairs(self):
        return sorted({(c.i, c.j) for c in self.crossings})


def _seg_dist(P0, P1, Q0, Q1):
    """Closest-point parameters and distances between segment batches."""
    d1 = P1 - P0
    d2 = Q1 - Q0
    r = P0 - Q0
    a = np.sum(d1 * d1, 1)
    e = np.sum(d2 * d2, 1)
    f = np.sum(d2 * r, 1)
    c = np.sum(d1 * r, 1)
    b = np.sum(d1 * d2, 1)
    den = a * e - b * b
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(den > 1e-300, np.clip((b * f - c * e) / den, 0, 1), 0.0)
        t = np.where(e > 1e-300, (b * s + f) / e, 0.0)
        s = np.where(t < 0, np.where(a > 1e-300, np.clip(-c / a, 0, 1), 0.0), s)
        s = np.where(t > 1, np.where(a > 1e-300, np.clip((b - c) / a, 0, 1), 0.0), s)
    t = np.clip(t, 0, 1)
    cp = P0 + s[:, None] * d1
    cq = Q0 + t[:, None] * d2
    return s, t, np.linalg.norm(cp - cq, axis=1), cp


def _planar_intersect(P0, P1, Q0, Q1):
    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    d1, d2, r = P1 - P0, Q1 - Q0, Q0 - P0
    den = cross(d1, d2)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = cross(r, d2) / den
        t = cross(r, d1) / den
    ok = (den != 0) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    return s, t, ok


EXIT_REASONS = ("target", "separatrix")


def default_momentum_tol(trajectories) -> float:
    """1e-2 max|f| over the escape trajectories of a run.

    Members that reached the target or the separatrix define the scale; those
    that ran off to the bounding box sample |f| far outside the basin and
    are used only when nothing escaped.
    """
    esc = [t for t in trajectories if t.stop_reason in EXIT_REASONS] or list(trajectories)
    return 1e-2 * max(t.meta.get("max_f", 0.0) for t in esc)


def _split(P0, P1, W0, W1, own, idx, cap):
    """Split segments longer than cap into equal pieces."""
    L = np.linalg.norm(P1 - P0, axis=1)
    m = np.maximum(1, np.ceil(L / cap).astype(int))
    rep = np.repeat(np.arange(len(L)), m)
    start = np.repeat(np.cumsum(m) - m, m)
    k = np.arange(len(rep)) - start
    u0 = (k / m[rep])[:, None]
    u1 = ((k + 1) / m[rep])[:, None]
    d, dw = P1[rep] - P0[rep], W1[rep] - W0[rep]
    return (P0[rep] + u0 * d, P0[rep] + u1 * d, W0[rep] + u0 * dw, W0[rep] + u1 * dw,
            own[rep], idx[rep])


def detect_crossings(trajectories, match_tol: float = 1e-3, momentum_tol: float | None = None,
                     model=None) -> CrossingReport:
    """Pairwise crossings of trajectories whose momenta differ at the crossing.

    Planar trajectories use exact segment intersection. Spherical ones (those
    carrying embedded unit vectors) use 3D segment proximity <= match_tol, so
    precession turns never create chart-boundary artefacts. Momenta are
    compared at velocity level, G p, embedded for spheres; ``model`` is needed
    only for spherical or non-Euclidean charts.
    """
    trajectories = list(trajectories)
    if momentum_tol is None:
        momentum_tol = default_momentum_tol(trajectories) if trajectories else 0.0
    segs = []
    for k, tr in enumerate(trajectories):
        if len(tr.t) < 2:
            continue
        Y, W = embedded(tr, model if (tr.m is not None or model is not None) else None)
        n = len(Y) - 1
        segs.append((Y[:-1], Y[1:], W[:-1], W[1:], np.full(n, k), np.arange(n)))
    if not segs:
        return CrossingReport([], match_tol, momentum_tol)
    P0, P1, W0, W1, own, idx = (np.concatenate(z) for z in zip(*segs))
    sphere = P0.shape[1] == 3

    # a pair can only count if one branch has |w| >= tol/2 somewhere on its segment
    wmax = np.maximum(np.linalg.norm(W0, axis=1), np.linalg.norm(W1, axis=1))
    big = wmax >= 0.5 * momentum_tol
    if not big.any():
        return CrossingReport([], match_tol, momentum_tol)
    L = np.linalg.norm(P1 - P0, axis=1)
    cap = max(10 * match_tol, float(np.median(L[big])))
    B0, B1, BW0, BW1, bown, bidx = _split(P0[big], P1[big], W0[big], W1[big], own[big], idx[big], cap)
    tree = cKDTree(0.5 * (B0 + B1))
    radius = 0.5 * L + 0.5 * cap + match_tol
    hits = tree.query_ball_point(0.5 * (P0 + P1), radius, return_sorted=False)
    a = np.repeat(np.arange(len(P0)), [len(h) for h in hits])
    if len(a) == 0:
        return CrossingReport([], match_tol, momentum_tol)
    b = np.concatenate([np.asarray(h, dtype=int) for h in hits])
    ok = (own[a] != bown[b]) | (np.abs(idx[a] - bidx[b]) > 1)
    a, b = a[ok], b[ok]
    if sphere:
        s, t, dist, cp = _seg_dist(P0[a], P1[a], B0[b], B1[b])
        hit = dist <= match_tol
    else:
        s, t, hit = _planar_intersect(P0[a], P1[a], B0[b], B1[b])
        cp = P0[a] + np.nan_to_num(s)[:, None] * (P1[a] - P0[a])
        dist = np.zeros(len(a))
    a, b, s, t, dist, cp = a[hit], b[hit], s[hit], t[hit], dist[hit], cp[hit]
    wa = W0[a] + s[:, None] * (W1[a] - W0[a])
    wb = BW0[b] + t[:, None] * (BW1[b] - BW0[b])
    mis = np.linalg.norm(wa - wb, axis=1)
    keep = mis >= momentum_tol
    a, b, dist, cp, mis = a[keep], b[keep], dist[keep], cp[keep], mis[keep]
    # orient so that i <= j, then merge runs of neighbouring segment hits
    ia, ib = own[a], bown[b]
    xa, xb = idx[a], bidx[b]
    swap = (ia > ib) | ((ia == ib) & (xa > xb))
    ia, ib = np.where(swap, ib, ia), np.where(swap, ia, ib)
    xa, xb = np.where(swap, xb, xa), np.where(swap, xa, xb)
    order = np.lexsort((xb, xa, ib, ia))
    out = []
    for k in order:
        c = Crossing(int(ia[k]), int(ib[k]), cp[k].copy(), float(mis[k]), float(dist[k]),
                     int(xa[k]), int(xb[k]))
        if out:
            q = out[-1]
            if (q.i, q.j) == (c.i, c.j) and abs(q.index_i - c.index_i) <= 2 and abs(q.index_j - c.index_j) <= 2:
                if c.distance < q.distance:
                    out[-1] = c
                else:
                    # advance the run anchor so long runs merge into one crossing
                    q.index_i, q.index_j = c.index_i, c.index_j
                continue
        out.append(c)
    return CrossingReport(out, match_tol, momentum_tol)


# --------------------------------------------------------------------------
# closed-form uniaxial oracle


def _theta_star(I):
    if not -1.0 < I < 1.0:
        raise OracleDomainError("|I| must be < 1")
    return math.acos(-I)


def analytic_phi_of_theta(theta, alpha: float, I: float):
    """phi(theta) = [log tan(th/2) + I log(2 (I + cos th) / sin th)] / (alpha (1 - I^2)).

    Defined on (0, arccos(-I)); the integrand diverges at the pole and at the
    separatrix.
    """
    ts = _theta_star(I)
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0) or np.any(th >= ts):
        raise OracleDomainError(f"theta must lie in (0, {ts:.6g}); the integrand diverges at the ends")
    out = (np.log(np.tan(th / 2)) + I * np.log(2 * (I + np.cos(th)) / np.sin(th))) / (alpha * (1 - I * I))
    return float(out) if np.ndim(out) == 0 else out


def analytic_uniaxial_action(theta, alpha: float, I: float):
    """S(theta) = 2 alpha [I (1 - cos th) + sin^2 th / 2] along p_theta = -2 f_theta."""
    ts = _theta_star(I)
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(th > ts + 1e-12):
        raise OracleDomainError(f"theta must lie in [0, {ts:.6g}]")
    out = 2 * alpha * (I * (1 - np.cos(th)) + 0.5 * np.sin(th) ** 2)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class OracleReport:
    rms: float  # RMS of the precession-averaged residual
    max_dev: float
    rms_raw: float  # RMS of the pointwise residual
    max_raw: float
    offset: float
    orientation: int  # +1 if phi follows the closed form, -1 if its mirror image
    I_used: float
    window: tuple
    restricted: bool  # theta was non-monotone; comparison used time samples
    n_points: int


def compare_to_oracle(traj: Trajectory, alpha: float, I: float, effective: bool = False,
                      omega: float | None = None, window=(0.1, 0.05), n_grid: int = 4000) -> OracleReport:
    """Deviation of the unwrapped phi(theta) from the closed-form curve.

    ``effective`` replaces I by I cos(omega), the drive seen by a polarizer
    tilted by omega (equivalently I_C -> I_C / cos omega). The phase constant
    and the handedness of phi are fitted. The pointwise residual carries the
    fast nutation of tilted runs; the headline RMS averages it over one
    precession turn.
    """
    if traj.m is None:
        raise ValueError("oracle comparison needs a spherical trajectory")
    if omega is None:
        omega = float(traj.meta.get("omega", 0.0))
    I_used = I * math.cos(omega) if effective else I
    ts = _theta_star(I_used)
    lo, hi = window[0], ts - window[1]
    th = np.arccos(np.clip(traj.m[:, 2], -1, 1))
    ph = np.unwrap(np.arctan2(traj.m[:, 1], traj.m[:, 0]))
    sel = (th >= lo) & (th <= hi)
    if sel.sum() < 10:
        raise ValueError("trajectory does not cover the comparison window")
    i0, i1 = np.nonzero(sel)[0][[0, -1]]
    th_w, ph_w = th[i0:i1 + 1], ph[i0:i1 + 1]
    monotone = bool(np.all(np.diff(th_w) > 0))

    best = None
    for sgn in (1, -1):
        if monotone:
            grid = np.linspace(max(lo, th_w[0]), min(hi, th_w[-1]), n_grid)
            resid = sgn * np.interp(grid, th_w, ph_w) - analytic_phi_of_theta(grid, alpha, I_used)
        else:
            resid = sgn * ph_w - analytic_phi_of_theta(np.clip(th_w, lo, hi), alpha, I_used)
        c = float(np.mean(resid))
        r = resid - c
        rms = float(np.sqrt(np.mean(r ** 2)))
        if best is None or rms < best[0]:
            best = (rms, sgn, c, r)
    rms_raw, sgn, c, r = best

    # precession average: uniform samples in phi, boxcar over one turn
    phs = sgn * ph_w
    order = np.argsort(phs)
    u = np.linspace(phs[order][0], phs[order][-1], n_grid)
    thu = np.interp(u, phs[order], th_w[order])
    ru = u - analytic_phi_of_theta(np.clip(thu, lo, hi), alpha, I_used)
    turn = 2 * np.pi
    span = u[-1] - u[0]
    if span > 2 * turn:
        w = max(1, int(round(turn / (u[1] - u[0]))))
        ra = np.convolve(ru, np.ones(w) / w, mode="valid")
    else:
        ra = ru
    ca = float(np.mean(ra))
    ra = ra - ca
    return OracleReport(float(np.sqrt(np.mean(ra ** 2))), float(np.max(np.abs(ra))),
                        rms_raw, float(np.max(np.abs(r))), c, sgn, I_used, (lo, hi),
                        not monotone, int(len(th_w)))


def chart_momenta(traj: Trajectory, model: Macrospin, axis: str = "z"):
    """Re-express a spherical trajectory's momenta in another chart.

    Returns (q, p, f) arrays in the target chart, where f is the lowered drift.
    """
    if traj.m is None:
        raise ValueError("chart_momenta needs a spherical trajectory")
    target = model.with_axis(axis)
    q = target.from_sphere(traj.m)
    p = np.empty_like(q)
    f = np.empty_like(q)
    for i in range(len(q)):
        g2 = model.metric(traj.x[i])
        w3 = model.tangent_to_sphere(traj.x[i], g2 * traj.p[i])
        _, et, ep = target.frame(q[i])
        st = math.sin(q[i, 0])
        F, _, g2t, _ = target.evaluate(q[i])
        w = np.array([et @ w3, (ep @ w3) / st])  # chart components of G p
        p[i] = w / g2t
        f[i] = F / g2t
    return q, p, f
