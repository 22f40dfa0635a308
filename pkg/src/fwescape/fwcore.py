"""Freidlin-Wentzell Lagrangian/Hamiltonian machinery for 2D drift models.

Notation: ``F`` is the raw drift, ``G = diag(g_1^2, g_2^2)`` the noise metric,
``f = G^{-1} F`` the lowered drift and ``|f|_G^2 = f.G.f``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .models import DriftModel, ModelError, call_kernel


class DegenerateEllipse(ModelError):
    """The momentum ellipse collapses (|f|_G ~ 0, i.e. at a fixed point)."""


@dataclass
class PhasePoint:
    x: np.ndarray
    p: np.ndarray
    t: float = 0.0
    s: float = 0.0
    S: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)


@dataclass
class Trajectory:
    """Accepted integrator steps of one Hamiltonian shot.

    ``S`` is integrated alongside the flow (dS/dt = p.xdot); ``accumulate_action``
    recomputes it by trapezoidal quadrature as a cross-check.
    """

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    s: np.ndarray
    S: np.ndarray
    H: np.ndarray = None
    psi: np.ndarray = None
    gamma: np.ndarray = None
    stop_reason: str = ""
    seed_index: int = 0
    meta: dict = field(default_factory=dict)
    m: np.ndarray = None  # embedded unit vectors for spherical charts

    def __len__(self):
        return len(self.t)

    @property
    def action(self) -> float:
        return float(self.S[-1])

    def point(self, i) -> PhasePoint:
        return PhasePoint(self.x[i], self.p[i], self.t[i], self.s[i], self.S[i])


def _norm_G(v, g2):
    return math.sqrt(float(np.sum(g2 * v * v)))


def eval_lagrangian(x, v, model: DriftModel) -> float:
    """1/2 (v - F).G^{-1}.(v - F)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ModelError("non-finite velocity")
    F, _, g2, _ = model.evaluate(x)
    w = v - F
    return 0.5 * float(np.sum(w * w / g2))


def eval_hamiltonian(pp: PhasePoint, model: DriftModel) -> float:
    """1/2 [(p+f).G.(p+f) - f.G.f]."""
    F, _, g2, _ = model.evaluate(pp.x)
    f = F / g2
    q = pp.p + f
    return 0.5 * float(np.sum(g2 * q * q) - np.sum(g2 * f * f))


@njit(cache=True)
def _flow(kernel, params, y):
    F, J, g2, dg2 = call_kernel(kernel, y[:2], params)
    p = y[2:4]
    dy = np.empty(6)
    xd0 = g2[0] * p[0] + F[0]
    xd1 = g2[1] * p[1] + F[1]
    dy[0] = xd0
    dy[1] = xd1
    for j in range(2):
        dy[2 + j] = -0.5 * (dg2[0, j] * p[0] * p[0] + dg2[1, j] * p[1] * p[1]) \
            - (J[0, j] * p[0] + J[1, j] * p[1])
    dy[4] = math.sqrt(xd0 * xd0 / g2[0] + xd1 * xd1 / g2[1])
    dy[5] = p[0] * xd0 + p[1] * xd1
    return dy


@njit(cache=True)
def _diagnostics(kernel, params, X, P):
    """Per-point H, |f|_G^2, |xdot|_{G^-1}, psi, gamma and xdot."""
    n = X.shape[0]
    H = np.empty(n)
    nf2 = np.empty(n)
    spd = np.empty(n)
    psi = np.empty(n)
    gam = np.empty(n)
    V = np.empty((n, 2))
    for i in range(n):
        F, J, g2, dg2 = call_kernel(kernel, X[i], params)
        f0 = F[0] / g2[0]
        f1 = F[1] / g2[1]
        q0 = P[i, 0] + f0
        q1 = P[i, 1] + f1
        a = g2[0] * f0 * f0 + g2[1] * f1 * f1
        H[i] = 0.5 * (g2[0] * q0 * q0 + g2[1] * q1 * q1 - a)
        nf2[i] = a
        v0 = g2[0] * q0
        v1 = g2[1] * q1
        V[i, 0] = v0
        V[i, 1] = v1
        spd[i] = math.sqrt(v0 * v0 / g2[0] + v1 * v1 / g2[1])
        if a > 0.0:
            c = (v0 * f0 + v1 * f1) / a
            psi[i] = math.acos(min(1.0, max(-1.0, c)))
        else:
            psi[i] = np.nan
        gam[i] = math.atan2(v1 / math.sqrt(g2[1]), v0 / math.sqrt(g2[0]))
    return H, nf2, spd, psi, gam, V


def diagnostics(model, X, P):
    fn = _diagnostics if model.jitted else _diagnostics.py_func
    return fn(model.jit_kernel, model.params, np.ascontiguousarray(X, dtype=float),
              np.ascontiguousarray(P, dtype=float))


def _flow_py(kernel, params, y):
    return _flow.py_func(kernel, params, y)


def hamiltonian_flow_rhs(pp: PhasePoint, model: DriftModel):
    """(xdot, pdot) with xdot = G.(p + f) and pdot = -grad_x H."""
    y = np.concatenate([pp.x, pp.p, [0.0, 0.0]])
    model.evaluate(pp.x)
    fn = _flow if model.jitted else _flow_py
    dy = fn(model.jit_kernel, model.params, y)
    return dy[:2], dy[2:4]


def ellipse_axes(x, model: DriftModel) -> np.ndarray:
    F, _, g2, _ = model.evaluate(x)
    f = F / g2
    return np.sqrt(np.sum(g2 * f * f) / g2)


def drift_angle(x, model: DriftModel) -> float:
    """gamma_0: the ellipse angle of the anti-instanton (p = 0), quadrant resolved."""
    F, _, g2, _ = model.evaluate(x)
    g = np.sqrt(g2)
    # p = 0 means |f| (cos g, sin g) = (g_x f_x, g_y f_y)
    f = F / g2
    return math.atan2(g[1] * f[1], g[0] * f[0])


def momentum_on_ellipse(x, gamma: float, model: DriftModel, eps_degenerate=1e-14) -> np.ndarray:
    F, _, g2, _ = model.evaluate(x)
    f = F / g2
    nf = _norm_G(f, g2)
    if nf < eps_degenerate:
        raise DegenerateEllipse(f"|f|_G = {nf:.3g} at {x}; seed from the fixed point instead")
    g = np.sqrt(g2)
    return np.array([nf / g[0] * math.cos(gamma) - f[0], nf / g[1] * math.sin(gamma) - f[1]])


def gamma_of_velocity(v, x, model: DriftModel) -> float:
    """Ellipse angle of a zero-energy velocity: xdot = (g_x|f| cos g, g_y|f| sin g)."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ModelError("zero velocity has no direction")
    g = np.sqrt(model.metric(x))
    return math.atan2(v[1] / g[1], v[0] / g[0])


def psi_angle(v, x, model: DriftModel) -> float:
    """Angle between the velocity and the drift, arccos(v.f / |f|_G^2)."""
    F, _, g2, _ = model.evaluate(x)
    f = F / g2
    nf2 = float(np.sum(g2 * f * f))
    if nf2 <= 1e-300:
        raise DegenerateEllipse("drift vanishes; psi undefined")
    c = float(np.dot(v, f)) / nf2
    return math.acos(min(1.0, max(-1.0, c)))


def project_to_zero_energy(x, p, model: DriftModel) -> np.ndarray:
    """Rescale p + f radially (in the G norm) onto the momentum ellipse."""
    F, _, g2, _ = model.evaluate(x)
    f = F / g2
    q = np.asarray(p, dtype=float) + f
    nq = _norm_G(q, g2)
    if nq == 0.0:
        raise DegenerateEllipse("p = -f has no radial direction")
    return -f + q * (_norm_G(f, g2) / nq)


def accumulate_action(traj: Trajectory) -> float:
    """Trapezoidal line integral of p.dx along the stored points."""
    if len(traj.t) < 2:
        raise ValueError("need at least two points")
    dx = np.diff(traj.x, axis=0)
    pm = 0.5 * (traj.p[1:] + traj.p[:-1])
    return float(traj.S[0] + np.sum(pm * dx))


def speed_residual(traj: Trajectory, model: DriftModel) -> np.ndarray:
    """Violation of |xdot|_{G^-1} = |f|_G relative to max(1, |f|_G) at every stored point.

    The floor keeps the measure finite at fixed points, where both sides vanish.
    """
    out = np.empty(len(traj.t))
    for i in range(len(traj.t)):
        F, _, g2, _ = model.evaluate(traj.x[i])
        f = F / g2
        xd = g2 * traj.p[i] + F
        a = math.sqrt(float(np.sum(xd * xd / g2)))
        b = _norm_G(f, g2)
        out[i] = abs(a - b) / max(1.0, b)
    return out


def energy_residual(traj: Trajectory, model: DriftModel) -> np.ndarray:
    """|H| / max(1, |f|_G^2) at every stored point."""
    out = np.empty(len(traj.t))
    for i in range(len(traj.t)):
        F, _, g2, _ = model.evaluate(traj.x[i])
        f = F / g2
        out[i] = abs(eval_hamiltonian(PhasePoint(traj.x[i], traj.p[i]), model)) / max(1.0, float(np.sum(g2 * f * f)))
    return out


def lorentz_residual(traj: Trajectory, model: DriftModel, tau: float = 1e-4, stride: int = 1) -> float:
    """Compare d|xdot|^2/dt with d|f|^2/dt by central differences.

    Both norms are the chart norms (G^{-1} for velocity, G for f). Each stored
    point is advanced by +-tau with one classical RK4 step. Returns
    max|a - b| / max|b| over the trajectory.
    """
    fn = _flow if model.jitted else _flow_py

    def rhs(y):
        return fn(model.jit_kernel, model.params, y)

    def norms(y):
        F, _, g2, _ = model.evaluate(y[:2])
        xd = g2 * y[2:4] + F
        f = F / g2
        return float(np.sum(xd * xd / g2)), float(np.sum(g2 * f * f))

    def rk4(y, h):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    da, db = [], []
    for i in range(0, len(traj.t), stride):
        y = np.concatenate([traj.x[i], traj.p[i], [0.0, 0.0]])
        a1, b1 = norms(rk4(y, tau))
        a0, b0 = norms(rk4(y, -tau))
        da.append((a1 - a0) / (2 * tau))
        db.append((b1 - b0) / (2 * tau))
    da, db = np.array(da), np.array(db)
    scale = np.max(np.abs(db))
    return float(np.max(np.abs(da - db)) / scale) if scale > 0 else float(np.max(np.abs(da)))


# --------------------------------------------------------------------------
# closed loops


@dataclass
class ClosedCurve:
    """Smooth periodic curve x(u), u in [0, 2 pi), with tangent dx/du."""

    point: callable
    tangent: callable

    @staticmethod
    def ellipse(center, a, b, angle=0.0):
        c, s = math.cos(angle), math.sin(angle)
        R = np.array([[c, -s], [s, c]])
        center = np.asarray(center, dtype=float)

        def point(u):
            u = np.asarray(u)
            return center + np.stack([a * np.cos(u), b * np.sin(u)], -1) @ R.T

        def tangent(u):
            u = np.asarray(u)
            return np.stack([-a * np.sin(u), b * np.cos(u)], -1) @ R.T

        return ClosedCurve(point, tangent)

    @staticmethod
    def circle(center, r):
        return ClosedCurve.ellipse(center, r, r)


@dataclass
class LoopTerms:
    perimeter: float
    flux: float

    @property
    def total(self) -> float:
        return self.perimeter - self.flux


def loop_decomposition(loop, model: DriftModel, n: int = 4096) -> LoopTerms:
    """Perimeter term  oint |f| ds  and flux term  oint f.dx  of a closed loop.

    By Green's theorem the flux term equals the enclosed curl of f. ``loop``
    is a :class:`ClosedCurve` (periodic trapezoid in u) or a closed
    :class:`Trajectory` (trapezoid over its points).
    """
    if isinstance(loop, ClosedCurve):
        u = np.linspace(0, 2 * np.pi, n, endpoint=False)
        X = loop.point(u)
        T = loop.tangent(u)
        du = 2 * np.pi / n
        f = np.array([model.lowered_drift(xi) for xi in X])
        g2 = np.array([model.metric(xi) for xi in X])
        nf = np.sqrt(np.sum(g2 * f * f, axis=1))
        ds = np.sqrt(np.sum(T * T / g2, axis=1))
        return LoopTerms(float(np.sum(nf * ds) * du), float(np.sum(np.sum(f * T, axis=1)) * du))
    X = np.asarray(loop.x)
    if np.linalg.norm(X[0] - X[-1]) > 1e-8 * max(1.0, np.abs(X).max()):
        raise ValueError("loop is not closed")
    mid = 0.5 * (X[1:] + X[:-1])
    dX = np.diff(X, axis=0)
    f = np.array([model.lowered_drift(xi) for xi in mid])
    g2 = np.array([model.metric(xi) for xi in mid])
    nf = np.sqrt(np.sum(g2 * f * f, axis=1))
    ds = np.sqrt(np.sum(dX * dX / g2, axis=1))
    return LoopTerms(float(np.sum(nf * ds)), float(np.sum(f * dX)))


def loop_action_in_time(loop: ClosedCurve, model: DriftModel, rtol=1e-12, atol=1e-14) -> float:
    """oint (|f|^2 - xdot.f) dt with the loop traversed at speed |xdot| = |f|.

    Integrates (u, S) in time with du/dt = |f|_G / |x'(u)|_{G^-1}; independent
    of the arc-length quadrature used by :func:`loop_decomposition`.
    """
    from scipy.integrate import solve_ivp

    def rhs(t, y):
        u = y[0]
        x = loop.point(u)
        T = loop.tangent(u)
        F, _, g2, _ = model.evaluate(x)
        f = F / g2
        nf2 = float(np.sum(g2 * f * f))
        udot = math.sqrt(nf2) / math.sqrt(float(np.sum(T * T / g2)))
        xdot = T * udot
        return [udot, nf2 - float(np.dot(xdot, f))]

    def done(t, y):
        return y[0] - 2 * np.pi

    done.terminal = True
    done.direction = 1
    sol = solve_ivp(rhs, (0, 1e6), [0.0, 0.0], method="DOP853", rtol=rtol, atol=atol, events=done)
    if sol.status != 1:
        raise RuntimeError("loop traversal did not close")
    return float(sol.y_events[0][0][1])
