"""Adaptive DOP853 integration of the FW Hamiltonian flow with stop events.

State vector ``y = (x1, x2, p1, p2, s, S)``: configuration, momentum, chart
arc length and accumulated action. The stepping loop is written once and
compiled with numba when the model kernel is jitted; user models in plain
Python run the same loop through ``py_func``.

Stop functions return an array; a trajectory stops when an entry goes from
positive to <= 0. The crossing is located by bisection on a fresh DOP853 step
of reduced size, so located states carry the integrator's full accuracy.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dc

from .fwcore import _flow
from .models import call_kernel

A = np.ascontiguousarray(_dc.A[:12, :12])
B = np.ascontiguousarray(_dc.B)
C = np.ascontiguousarray(_dc.C[:12])
E3 = np.ascontiguousarray(_dc.E3)
E5 = np.ascontiguousarray(_dc.E5)

# stop codes
RUNNING, STOP_EVENT, STOP_TIME, STOP_ARC, STOP_UNDERFLOW, STOP_NONFINITE, STOP_MAXSTEPS = range(7)

# stop-set kinds
PLANAR, SPHERE = 0, 1


@njit(cache=True)
def _step(kernel, params, y, f0, h):
    n = y.shape[0]
    K = np.empty((13, n))
    K[0] = f0
    for s in range(1, 12):
        dy = np.zeros(n)
        for j in range(s):
            dy += A[s, j] * K[j]
        K[s] = _flow(kernel, params, y + h * dy)
    yn = y.copy()
    for j in range(12):
        yn += h * B[j] * K[j]
    K[12] = _flow(kernel, params, yn)
    e5 = np.zeros(n)
    e3 = np.zeros(n)
    for j in range(13):
        e5 += E5[j] * K[j]
        e3 += E3[j] * K[j]
    return yn, K[12], e5, e3


@njit(cache=True)
def stop_values(kind, sp, y, kernel, params):
    """Stop functions for the built-in stop sets.

    PLANAR sp = (tx, ty, target_tol, approach_radius, sep_index, sep_sign, box)
      [r - tol, closest-approach inside approach_radius, separatrix, box]
    SPHERE sp = (D, eps_boundary, eps_tol, pole_tol, R[9])
      [eps_b - tol - eps(m), sin(theta) - pole_tol]
    """
    if kind == PLANAR:
        out = np.empty(4)
        dx = y[0] - sp[0]
        dy = y[1] - sp[1]
        r = math.sqrt(dx * dx + dy * dy)
        out[0] = r - sp[2]
        out[1] = 1.0
        if r < sp[3]:
            F, J, g2, dg2 = call_kernel(kernel, y[:2], params)
            vx = g2[0] * y[2] + F[0]
            vy = g2[1] * y[3] + F[1]
            out[1] = -(dx * vx + dy * vy)
        out[2] = 1.0
        k = int(sp[4])
        if k >= 0:
            out[2] = sp[5] * y[k]
        out[3] = sp[6] - max(abs(y[0]), abs(y[1]))
        return out
    out = np.empty(2)
    st, ct = math.sin(y[0]), math.cos(y[0])
    s1, c1 = math.sin(y[1]), math.cos(y[1])
    u0, u1, u2 = st * c1, st * s1, ct
    mx = sp[4] * u0 + sp[5] * u1 + sp[6] * u2
    mz = sp[10] * u0 + sp[11] * u1 + sp[12] * u2
    e = sp[0] * mx * mx - mz * mz
    out[0] = sp[1] - sp[2] - e
    out[1] = abs(st) - sp[3]
    return out


@njit(cache=True)
def _project(kernel, params, y):
    F, J, g2, dg2 = call_kernel(kernel, y[:2], params)
    f0 = F[0] / g2[0]
    f1 = F[1] / g2[1]
    q0 = y[2] + f0
    q1 = y[3] + f1
    nq = math.sqrt(g2[0] * q0 * q0 + g2[1] * q1 * q1)
    nf = math.sqrt(g2[0] * f0 * f0 + g2[1] * f1 * f1)
    if nq > 0:
        y[2] = -f0 + q0 * nf / nq
        y[3] = -f1 + q1 * nf / nq


@njit(cache=True, nogil=True)
def integrate(kernel, params, y0, t_max, s_max, rtol, atol, kind, sp, project, h0, max_steps):
    """Returns (ts, ys, code, event_index)."""
    n = y0.shape[0]
    cap = 1024
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    y = y0.copy()
    t = 0.0
    ts[0] = t
    ys[0] = y
    k = 1
    f = _flow(kernel, params, y)
    g = stop_values(kind, sp, y, kernel, params)
    h = h0
    rejected = False
    code = RUNNING
    which = -1
    nsteps = 0
    while code == RUNNING:
        nsteps += 1
        if nsteps > max_steps:
            code = STOP_MAXSTEPS
            break
        if t + h > t_max:
            h = t_max - t
        if h < 1e-14 * max(1.0, abs(t)):
            code = STOP_UNDERFLOW
            break
        yn, fn, e5, e3 = _step(kernel, params, y, f, h)
        err5 = 0.0
        err3 = 0.0
        for i in range(n):
            sc = atol + max(abs(y[i]), abs(yn[i])) * rtol
            err5 += (e5[i] / sc) ** 2
            err3 += (e3[i] / sc) ** 2
        den = err5 + 0.01 * err3
        err = 0.0 if den == 0.0 else abs(h) * err5 / math.sqrt(den * n)
        if not np.isfinite(err) or not np.all(np.isfinite(yn)):
            if h < 1e-12:
                code = STOP_NONFINITE
                break
            h *= 0.2
            rejected = True
            continue
        if err >= 1.0:
            h *= max(0.2, 0.9 * err ** (-1.0 / 8.0))
            rejected = True
            continue
        if project:
            _project(kernel, params, yn)
            fn = _flow(kernel, params, yn)
        gn = stop_values(kind, sp, yn, kernel, params)
        hit = -1
        for i in range(gn.shape[0]):
            if g[i] > 0.0 and gn[i] <= 0.0:
                hit = i
                break
        if hit >= 0:
            lo, hi = 0.0, h
            yb = yn
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                ym, fm, _e5, _e3 = _step(kernel, params, y, f, mid)
                gm = stop_values(kind, sp, ym, kernel, params)
                trig = False
                for i in range(gm.shape[0]):
                    if g[i] > 0.0 and gm[i] <= 0.0:
                        trig = True
                        hit = i
                        break
                if trig:
                    hi = mid
                    yb = ym
                else:
                    lo = mid
                if hi - lo < 1e-12 * max(1.0, abs(t)):
                    break
            yb2, _f, _e5, _e3 = _step(kernel, params, y, f, hi)
            yn = yb2
            t = t + hi
            code = STOP_EVENT
            which = hit
        else:
            t = t + h
            fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
            if rejected:
                fac = min(1.0, fac)
            h *= fac
            rejected = False
        y = yn
        f = fn
        g = gn
        if k >= cap:
            cap *= 2
            ts2 = np.empty(cap)
            ys2 = np.empty((cap, n))
            ts2[:k] = ts[:k]
            ys2[:k] = ys[:k]
            ts, ys = ts2, ys2
        ts[k] = t
        ys[k] = y
        k += 1
        if code == RUNNING:
            if t >= t_max:
                code = STOP_TIME
            elif y[4] >= s_max:
                code = STOP_ARC
    return ts[:k].copy(), ys[:k].copy(), code, which


def run(model, y0, *, t_max, s_max, rtol, atol, kind, sp, project=False, h0=1e-4, max_steps=10_000_000):
    y0 = np.asarray(y0, dtype=float)
    sp = np.asarray(sp, dtype=float)
    fn = integrate if model.jitted else _py_integrate
    return fn(model.jit_kernel, model.params, y0, float(t_max), float(s_max), float(rtol), float(atol),
              int(kind), sp, bool(project), float(h0), int(max_steps))


def _py_integrate(*args):
    # plain-Python execution of the same loop for non-jitted user models
    glb = integrate.py_func.__globals__
    saved = {name: glb[name] for name in ("_flow", "_step", "stop_values", "_project")}
    try:
        glb["_flow"] = _flow.py_func
        glb["_step"] = _step.py_func
        glb["stop_values"] = stop_values.py_func
        glb["_project"] = _project.py_func
        return integrate.py_func(*args)
    finally:
        glb.update(saved)
