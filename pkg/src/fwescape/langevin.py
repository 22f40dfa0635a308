"""Stratonovich Langevin simulation of escapes (Heun predictor-corrector).

Planar models: dx = F dt + sqrt(eps) g dW with g_i^2 the model metric.
Macrospin: dm = A dt + sqrt(C) [-m x dW + alpha (dW - m (m.dW))] with
C = alpha eps / (1 + alpha^2), so the I = 0 stationary law is exp(-energy/eps);
the state is renormalised to |m| = 1 after every step.

Every realization draws from its own Philox stream spawned from the master
seed, so results do not depend on scheduling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .models import DoubleWell, DriftModel, Macrospin, MaierStein, call_kernel, macrospin_drift3

ESCAPED, RUNNING, NONFINITE = 1, 0, -1


@dataclass
class SimConfig:
    eps_noise: float
    h: float = 1e-2
    t_max: float = 1e7
    n_realizations: int = 500
    x0: tuple | None = None  # None: the model's stable state
    seed: int = 0
    section: float | None = 0.5  # planar: record y at the last downward crossing of x = section
    target_radius: float | None = None  # planar: stop near the target instead of at the separatrix
    thin: int = 100
    path_len: int = 2000
    chunk: int = 1 << 16
    threads: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be > 0")
        if not self.eps_noise > 0:
            raise ValueError("eps_noise must be > 0")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.thin < 1 or self.path_len < 1:
            raise ValueError("thin and path_len must be >= 1")


@dataclass
class EscapeEvent:
    realization: int
    exit_time: float
    exit_point: np.ndarray
    path: np.ndarray  # thinned trace ending at the exit
    seed: tuple  # spawn key of the realization's stream
    section_y: float = math.nan
    section_t: float = math.nan


@dataclass
class EscapeRun:
    events: list
    censored: list  # realization indices that hit t_max
    failed: list = field(default_factory=list)  # aborted on a non-finite state
    config: SimConfig | None = None

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def summary(self) -> dict:
        return {"escaped": len(self.events), "censored": len(self.censored), "failed": len(self.failed),
                "mean_exit_time": float(np.mean([e.exit_time for e in self.events])) if self.events else None}

    def section_values(self) -> np.ndarray:
        v = np.array([e.section_y for e in self.events])
        return v[np.isfinite(v)]


# --------------------------------------------------------------------------
# single steps (reference implementation)


def macrospin_noise_scale(alpha: float, eps_noise: float) -> float:
    """sqrt(C), with C fixed by requiring the I = 0 law exp(-energy/eps_noise)."""
    return math.sqrt(alpha * eps_noise / (1.0 + alpha * alpha))


def _macro_noise(m, dW, alpha):
    return -np.cross(m, dW) + alpha * (dW - m * (m @ dW))


def heun_stratonovich_step(state, model: DriftModel, h: float, dW, eps_noise: float):
    """One Heun step; dW is the Wiener increment (variance h per component)."""
    state = np.asarray(state, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if not np.all(np.isfinite(state)):
        raise FloatingPointError("non-finite state")
    se = math.sqrt(eps_noise)
    if isinstance(model, Macrospin):
        a, D, I, n = model.alpha, model.D, model.I, model.n_p
        se = macrospin_noise_scale(a, eps_noise)
        A0 = macrospin_drift3(state, a, D, I, n)
        B0 = se * _macro_noise(state, dW, a)
        mp = state + A0 * h + B0
        A1 = macrospin_drift3(mp, a, D, I, n)
        B1 = se * _macro_noise(mp, dW, a)
        m = state + 0.5 * (A0 + A1) * h + 0.5 * (B0 + B1)
        return m / np.linalg.norm(m)
    F0, _, g20, _ = model.evaluate(state)
    B0 = se * np.sqrt(g20) * dW
    xp = state + F0 * h + B0
    F1, _, g21, _ = model.evaluate(xp)
    B1 = se * np.sqrt(g21) * dW
    return state + 0.5 * (F0 + F1) * h + 0.5 * (B0 + B1)


# --------------------------------------------------------------------------
# compiled chunk kernels


GENERIC, MAIER_STEIN, DOUBLE_WELL = 0, 1, 2


@njit(cache=True, inline="always")
def _drift2(code, kernel, params, X, Y, buf):
    # scalar drift and metric; built-in models avoid the kernel's array allocations
    if code == MAIER_STEIN:
        a = params[0]
        return X * (1.0 - X * X - a * Y * Y), -Y * (1.0 + X * X), 1.0, 1.0
    if code == DOUBLE_WELL:
        return -X * (X * X - 1.0), -Y, 1.0, 1.0
    buf[0] = X
    buf[1] = Y
    F, _, g, _ = call_kernel(kernel, buf, params)
    return F[0], F[1], g[0], g[1]


@njit(cache=True, nogil=True)
def _planar_chunk(code, kernel, params, se, h, x, t, dW, sep_index, target, target_r, section,
                  rec, thin, ring, ring_pos, counter):
    """Advance one realization through a block of noise increments.

    rec = [section_y, section_t]; returns (status, t, steps taken, ring_pos, counter).
    """
    n = dW.shape[0]
    buf = np.empty(2)
    X, Y = x[0], x[1]
    for k in range(n):
        f0, f1, g0, g1 = _drift2(code, kernel, params, X, Y, buf)
        b0 = se * math.sqrt(g0) * dW[k, 0]
        b1 = se * math.sqrt(g1) * dW[k, 1]
        u0, u1, v0, v1 = _drift2(code, kernel, params, X + f0 * h + b0, Y + f1 * h + b1, buf)
        nx = X + 0.5 * (f0 + u0) * h + 0.5 * (b0 + se * math.sqrt(v0) * dW[k, 0])
        ny = Y + 0.5 * (f1 + u1) * h + 0.5 * (b1 + se * math.sqrt(v1) * dW[k, 1])
        t += h
        if not (math.isfinite(nx) and math.isfinite(ny)):
            x[0], x[1] = X, Y
            return NONFINITE, t, k + 1, ring_pos, counter
        if section == section and X > section and nx <= section:
            w = (X - section) / (X - nx)
            rec[0] = Y + w * (ny - Y)
            rec[1] = t - h + w * h
        X, Y = nx, ny
        counter += 1
        if counter % thin == 0:
            r = ring_pos % ring.shape[0]
            ring[r, 0] = t
            ring[r, 1] = X
            ring[r, 2] = Y
            ring_pos += 1
        done = False
        if target_r > 0.0:
            dx = X - target[0]
            dy = Y - target[1]
            done = dx * dx + dy * dy <= target_r * target_r
        elif sep_index == 0:
            done = X <= 0.0
        elif sep_index == 1:
            done = Y <= 0.0
        if done:
            x[0], x[1] = X, Y
            return ESCAPED, t, k + 1, ring_pos, counter
    x[0], x[1] = X, Y
    return RUNNING, t, n, ring_pos, counter


@njit(cache=True, nogil=True)
def _macrospin_chunk(alpha, D, I, npol, se, h, m, t, dW, eps_b, thin, ring, ring_pos, counter):
    n = dW.shape[0]
    mp = np.empty(3)
    for k in range(n):
        A0 = macrospin_drift3(m, alpha, D, I, npol)
        w = dW[k]
        md = m[0] * w[0] + m[1] * w[1] + m[2] * w[2]
        B0 = np.empty(3)
        B0[0] = se * (-(m[1] * w[2] - m[2] * w[1]) + alpha * (w[0] - m[0] * md))
        B0[1] = se * (-(m[2] * w[0] - m[0] * w[2]) + alpha * (w[1] - m[1] * md))
        B0[2] = se * (-(m[0] * w[1] - m[1] * w[0]) + alpha * (w[2] - m[2] * md))
        for i in range(3):
            mp[i] = m[i] + A0[i] * h + B0[i]
        A1 = macrospin_drift3(mp, alpha, D, I, npol)
        pd = mp[0] * w[0] + mp[1] * w[1] + mp[2] * w[2]
        B1 = np.empty(3)
        B1[0] = se * (-(mp[1] * w[2] - mp[2] * w[1]) + alpha * (w[0] - mp[0] * pd))
        B1[1] = se * (-(mp[2] * w[0] - mp[0] * w[2]) + alpha * (w[1] - mp[1] * pd))
        B1[2] = se * (-(mp[0] * w[1] - mp[1] * w[0]) + alpha * (w[2] - mp[2] * pd))
        nrm = 0.0
        for i in range(3):
            m[i] = m[i] + 0.5 * (A0[i] + A1[i]) * h + 0.5 * (B0[i] + B1[i])
            nrm += m[i] * m[i]
        t += h
        if not math.isfinite(nrm) or nrm == 0.0:
            return NONFINITE, t, k + 1, ring_pos, counter
        nrm = math.sqrt(nrm)
        for i in range(3):
            m[i] /= nrm
        counter += 1
        if counter % thin == 0:
            r = ring_pos % ring.shape[0]
            ring[r, 0] = t
            ring[r, 1] = m[0]
            ring[r, 2] = m[1]
            ring[r, 3] = m[2]
            ring_pos += 1
        if D * m[0] * m[0] - m[2] * m[2] >= eps_b:
            return ESCAPED, t, k + 1, ring_pos, counter
    return RUNNING, t, n, ring_pos, counter


# --------------------------------------------------------------------------
# driver


def _initial_state(model, config):
    if config.x0 is not None:
        x = np.array(config.x0, dtype=float)
        if isinstance(model, Macrospin):
            if abs(np.linalg.norm(x) - 1) > 1e-9:
                raise ValueError("macrospin initial state must be a unit vector")
        return x
    if isinstance(model, Macrospin):
        mx = model.with_axis("x")  # keeps the +z state off the chart pole
        return mx.to_sphere(mx.stable_point())
    if isinstance(model, (MaierStein, DoubleWell)):
        return np.array([1.0, 0.0])
    raise ValueError("initial state required for custom models")


def _unroll(ring, ring_pos):
    n = ring.shape[0]
    if ring_pos <= n:
        return ring[:ring_pos].copy()
    k = ring_pos % n
    return np.concatenate([ring[k:], ring[:k]])


def _one_realization(model, config, k, seq, x_init, eps_b):
    rng = np.random.Generator(np.random.Philox(seq))
    sh = math.sqrt(config.h)
    se = math.sqrt(config.eps_noise)
    x = x_init.copy()
    t = 0.0
    sphere = isinstance(model, Macrospin)
    if sphere:
        se = macrospin_noise_scale(model.alpha, config.eps_noise)
    dim = 3 if sphere else 2
    ring = np.zeros((config.path_len, dim + 1))
    ring_pos, counter = 0, 0
    rec = np.array([math.nan, math.nan])
    chunk = 1024
    if not sphere:
        sep_index = 0 if isinstance(model, (MaierStein, DoubleWell)) else -1
        code = MAIER_STEIN if isinstance(model, MaierStein) else (
            DOUBLE_WELL if isinstance(model, DoubleWell) else GENERIC)
        target = np.zeros(2)
        target_r = config.target_radius or 0.0
        section = math.nan if config.section is None else float(config.section)
    while t < config.t_max:
        steps = min(chunk, max(1, int(math.ceil((config.t_max - t) / config.h))))
        dW = rng.standard_normal((steps, dim)) * sh
        if sphere:
            status, t, used, ring_pos, counter = _macrospin_chunk(
                model.alpha, model.D, model.I, model.n_p, se, config.h, x, t, dW, eps_b,
                config.thin, ring, ring_pos, counter)
        else:
            status, t, used, ring_pos, counter = _planar_chunk(
                code, model.jit_kernel, model.params, se, config.h, x, t, dW, sep_index, target, target_r,
                section, rec, config.thin, ring, ring_pos, counter)
        if status == NONFINITE:
            return "failed", k
        if status == ESCAPED:
            path = _unroll(ring, ring_pos)
            path = np.vstack([path, np.concatenate([[t], x])])
            return "escaped", EscapeEvent(k, t, x.copy(), path, tuple(seq.spawn_key),
                                          float(rec[0]), float(rec[1]))
        chunk = min(chunk * 2, config.chunk)
    return "censored", k


def simulate_escapes(model: DriftModel, config: SimConfig) -> EscapeRun:
    """Independent escape realizations from the stable state.

    Planar runs stop when x crosses the separatrix x = 0 (or enter the target
    disc if ``target_radius`` is set); macrospin runs stop when the energy
    reaches the basin boundary level. Realizations that reach ``t_max`` are
    censored.
    """
    if not model.jitted:
        raise ValueError("Langevin kernels need a compiled model kernel")
    x_init = _initial_state(model, config)
    eps_b = model.boundary_energy() if isinstance(model, Macrospin) else 0.0
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_realizations)

    def run(k):
        return _one_realization(model, config, k, seqs[k], x_init, eps_b)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, range(config.n_realizations)))
    else:
        results = [run(k) for k in range(config.n_realizations)]
    ev = [r[1] for r in results if r[0] == "escaped"]
    cen = [r[1] for r in results if r[0] == "censored"]
    bad = [r[1] for r in results if r[0] == "failed"]
    return EscapeRun(ev, cen, bad, config)


# --------------------------------------------------------------------------
# stationary check and section statistics


def stationary_energies(model: Macrospin, eps_noise: float, h: float, t_run: float, n: int,
                        seed: int = 0, x0=None) -> np.ndarray:
    """Energies of n independent macrospins after running for t_run (no stop set)."""
    m0 = np.array([0.0, 0.0, 1.0]) if x0 is None else np.asarray(x0, dtype=float)
    seqs = np.random.SeedSequence(seed).spawn(n)
    out = np.empty(n)
    steps = int(round(t_run / h))
    ring = np.zeros((1, 4))
    for k in range(n):
        rng = np.random.Generator(np.random.Philox(seqs[k]))
        m = m0.copy()
        dW = rng.standard_normal((steps, 3)) * math.sqrt(h)
        _macrospin_chunk(model.alpha, model.D, model.I, model.n_p, macrospin_noise_scale(model.alpha, eps_noise), h, m, 0.0,
                         dW, np.inf, steps + 1, ring, 0, 0)
        out[k] = model.D * m[0] ** 2 - m[2] ** 2
    return out


def stationary_energy_cdf(D: float, beta: float, n: int = 2001):
    """CDF of eps(m) = D m_x^2 - m_z^2 under exp(-beta eps) on the uniform sphere.

    With beta = 1/eps_noise this is the I = 0 stationary law of the simulator.

    Returns a callable built from a fine quadrature in (cos theta, phi).
    """
    u = np.linspace(-1, 1, n)
    ph = np.linspace(0, 2 * np.pi, n, endpoint=False)
    U, P = np.meshgrid(u, ph, indexing="ij")
    mx = np.sqrt(1 - U ** 2) * np.cos(P)
    e = (D * mx ** 2 - U ** 2).ravel()
    w = np.exp(-beta * (e - e.min()))
    # trapezoid weights in u
    wu = np.full(n, 2.0 / (n - 1))
    wu[[0, -1]] *= 0.5
    w = w * np.repeat(wu, n)
    order = np.argsort(e)
    es, cw = e[order], np.cumsum(w[order])
    cw /= cw[-1]

    def cdf(x):
        return np.interp(x, es, cw, left=0.0, right=1.0)

    return cdf


def bimodality(values, alpha_level: float = 0.05) -> dict:
    """Hartigan dip test plus a bootstrap interval for the mean."""
    import diptest

    v = np.asarray(values, dtype=float)
    dip, p = diptest.diptest(v)
    rng = np.random.default_rng(0)
    boot = rng.choice(v, size=(2000, len(v)), replace=True).mean(1)
    from scipy.stats import kurtosis

    return {"n": int(len(v)), "dip": float(dip), "p_value": float(p), "bimodal": bool(p < alpha_level),
            "mean": float(v.mean()), "mean_se": float(boot.std()), "std": float(v.std()),
            "mean_abs": float(np.abs(v).mean()), "excess_kurtosis": float(kurtosis(v))}
