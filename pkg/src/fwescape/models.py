"""Built-in drift models.

Every model exposes a point kernel ``kernel(x, params) -> (F, J, g2, dg2)``
returning the raw drift ``F``, its Jacobian ``J[i, j] = dF_i/dx_j``, the
diagonal metric entries ``g2 = (g_1^2, g_2^2)`` and their derivatives
``dg2[i, j] = d(g_i^2)/dx_j``. Built-in kernels are numba-compiled so the
Hamiltonian integrator can run fully in nopython mode.

Macrospin conventions
---------------------
Energy ``eps(m) = D m_x^2 - m_z^2``. The precession field used by the
dynamics is ``h = -grad(eps)/2 = (-D m_x, 0, m_z)``; with this normalisation
the spherical drift at D=0, omega=0 is exactly
``(-alpha (I + cos th) sin th, -cos th)`` and the critical currents are
``(D+2)/2`` (D < D0) and ``(2/pi) sqrt(D(D+1))`` (D > D0). The current is
signed; ``I < 0`` destabilises the m_z > 0 basin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.extending import overload

D0 = 5.09
POLE_TOL = 1e-4


class ModelError(ValueError):
    pass


class PoleChart(ModelError):
    """Raised when a spherical chart is evaluated too close to its pole."""


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def maier_stein_kernel(x, params):
    a = params[0]
    X, Y = x[0], x[1]
    F = np.empty(2)
    F[0] = X * (1.0 - X * X - a * Y * Y)
    F[1] = -Y * (1.0 + X * X)
    J = np.empty((2, 2))
    J[0, 0] = 1.0 - 3.0 * X * X - a * Y * Y
    J[0, 1] = -2.0 * a * X * Y
    J[1, 0] = -2.0 * X * Y
    J[1, 1] = -(1.0 + X * X)
    return F, J, np.ones(2), np.zeros((2, 2))


@njit(cache=True)
def double_well_kernel(x, params):
    X, Y = x[0], x[1]
    F = np.empty(2)
    F[0] = -X * (X * X - 1.0)
    F[1] = -Y
    J = np.zeros((2, 2))
    J[0, 0] = 1.0 - 3.0 * X * X
    J[1, 1] = -1.0
    return F, J, np.ones(2), np.zeros((2, 2))


@njit(cache=True)
def _cross(a, b):
    c = np.empty(3)
    c[0] = a[1] * b[2] - a[2] * b[1]
    c[1] = a[2] * b[0] - a[0] * b[2]
    c[2] = a[0] * b[1] - a[1] * b[0]
    return c


@njit(cache=True)
def _skew(a):
    S = np.zeros((3, 3))
    S[0, 1] = -a[2]
    S[0, 2] = a[1]
    S[1, 0] = a[2]
    S[1, 2] = -a[0]
    S[2, 0] = -a[1]
    S[2, 1] = a[0]
    return S


@njit(cache=True)
def macrospin_field(m, D):
    h = np.empty(3)
    h[0] = -D * m[0]
    h[1] = 0.0
    h[2] = m[2]
    return h


@njit(cache=True)
def macrospin_drift3(m, alpha, D, I, n):
    h = macrospin_field(m, D)
    mh = m[0] * h[0] + m[1] * h[1] + m[2] * h[2]
    mn = m[0] * n[0] + m[1] * n[1] + m[2] * n[2]
    prec = _cross(m, h)
    A = np.empty(3)
    for i in range(3):
        A[i] = prec[i] - alpha * (m[i] * mh - h[i]) - alpha * I * (m[i] * mn - n[i])
    return A


@njit(cache=True)
def macrospin_jac3(m, alpha, D, I, n):
    H = np.zeros((3, 3))
    H[0, 0] = -D
    H[2, 2] = 1.0
    h = macrospin_field(m, D)
    mh = m[0] * h[0] + m[1] * h[1] + m[2] * h[2]
    mn = m[0] * n[0] + m[1] * n[1] + m[2] * n[2]
    J = _skew(m) @ H - _skew(h)
    for i in range(3):
        for j in range(3):
            d = 1.0 if i == j else 0.0
            J[i, j] -= alpha * (mh * d + 2.0 * m[i] * h[j] - H[i, j])
            J[i, j] -= alpha * I * (mn * d + m[i] * n[j])
    return J


@njit(cache=True)
def chart_frame(q, R):
    """Embedded point and frame vectors (m, e_theta, e_phi) of chart point q."""
    st, ct = math.sin(q[0]), math.cos(q[0])
    sp, cp = math.sin(q[1]), math.cos(q[1])
    u = np.array([st * cp, st * sp, ct])
    et = np.array([ct * cp, ct * sp, -st])
    ep = np.array([-sp, cp, 0.0])
    return R @ u, R @ et, R @ ep


@njit(cache=True)
def macrospin_kernel(q, params):
    # params: alpha, D, I, nx, ny, nz, R (9 entries, row-major)
    alpha, D, I = params[0], params[1], params[2]
    n = params[3:6].copy()
    R = params[6:15].copy().reshape((3, 3))
    m, et, ep = chart_frame(q, R)
    st, ct = math.sin(q[0]), math.cos(q[0])
    A = macrospin_drift3(m, alpha, D, I, n)
    JA = macrospin_jac3(m, alpha, D, I, n)
    At = et @ A
    Ap = ep @ A
    Jee = et @ (JA @ et)
    Jep = et @ (JA @ ep)
    Jpe = ep @ (JA @ et)
    Jpp = ep @ (JA @ ep)
    F = np.empty(2)
    F[0] = At
    F[1] = Ap / st
    J = np.empty((2, 2))
    J[0, 0] = Jee
    J[0, 1] = ct * Ap + st * Jep
    J[1, 0] = Jpe / st - ct / (st * st) * Ap
    J[1, 1] = -ct * At / st + Jpp
    g2 = np.empty(2)
    g2[0] = 1.0
    g2[1] = 1.0 / (st * st)
    dg2 = np.zeros((2, 2))
    dg2[1, 0] = -2.0 * ct / (st * st * st)
    return F, J, g2, dg2


# Built-in kernels are addressed by an integer code inside compiled loops.
# Passing a compiled kernel as an argument would key numba's on-disk cache on
# the dispatcher object, forcing a recompile in every new process.
MAIER_STEIN_CODE, DOUBLE_WELL_CODE, MACROSPIN_CODE = 1, 2, 3


@njit(cache=True)
def builtin_kernel(code, x, params):
    if code == MAIER_STEIN_CODE:
        return maier_stein_kernel(x, params)
    if code == DOUBLE_WELL_CODE:
        return double_well_kernel(x, params)
    return macrospin_kernel(x, params)


def call_kernel(kernel, x, params):
    """Evaluate a kernel given either as a callable or as a built-in code."""
    if isinstance(kernel, (int, np.integer)):
        return builtin_kernel(kernel, x, params)
    return kernel(x, params)


@overload(call_kernel)
def _call_kernel_impl(kernel, x, params):
    if isinstance(kernel, types.Integer):
        return lambda kernel, x, params: builtin_kernel(kernel, x, params)
    return lambda kernel, x, params: kernel(x, params)


# --------------------------------------------------------------------------
# model objects


@dataclass(frozen=True, eq=False)
class DriftModel:
    """A 2D drift model with a diagonal (possibly position-dependent) metric.

    Subclasses set ``kernel`` to a numba point kernel. User models can be
    built with :meth:`from_functions`, which runs in plain Python.
    """

    name: str = "custom"
    params: np.ndarray = field(default_factory=lambda: np.zeros(1), repr=False)
    kernel: object = field(default=None, repr=False, compare=False)

    @property
    def jitted(self) -> bool:
        return hasattr(self.kernel, "py_func")

    @property
    def jit_kernel(self):
        """What compiled loops receive: a built-in code, or the kernel itself."""
        return KERNEL_CODES.get(self.kernel, self.kernel)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ModelError(f"non-finite configuration {x}")
        return self.kernel(x, self.params)

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.evaluate(x)[0]
        flat = x.reshape(-1, 2)
        out = np.array([self.kernel(xi, self.params)[0] for xi in flat])
        return out.reshape(x.shape)

    def jacobian(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def metric(self, x) -> np.ndarray:
        """Diagonal metric entries g_i^2 at x."""
        g2 = self.evaluate(x)[2]
        if np.any(g2 <= 0):
            raise ModelError(f"metric not positive at {x}")
        return g2

    def lowered_drift(self, x) -> np.ndarray:
        F, _, g2, _ = self.evaluate(x)
        return F / g2

    def curl(self, x) -> float:
        """Scalar curl d f_y/dx - d f_x/dy of the lowered drift (isotropic charts)."""
        _, J, g2, dg2 = self.evaluate(x)
        F = self.evaluate(x)[0]
        dfy_dx = J[1, 0] / g2[1] - F[1] * dg2[1, 0] / g2[1] ** 2
        dfx_dy = J[0, 1] / g2[0] - F[0] * dg2[0, 1] / g2[0] ** 2
        return float(dfy_dx - dfx_dy)

    def fixed_points(self) -> list:
        return []

    @staticmethod
    def from_functions(drift, jacobian=None, metric=None, name="custom", h_fd=1e-6):
        """Wrap Python callables; missing Jacobians use central differences."""

        def kernel(x, params):
            F = np.asarray(drift(x), dtype=float)
            if jacobian is not None:
                J = np.asarray(jacobian(x), dtype=float)
            else:
                J = np.empty((2, 2))
                for j in range(2):
                    h = h_fd * max(1.0, abs(x[j]))
                    e = np.zeros(2)
                    e[j] = h
                    J[:, j] = (np.asarray(drift(x + e)) - np.asarray(drift(x - e))) / (2 * h)
            if metric is None:
                return F, J, np.ones(2), np.zeros((2, 2))
            g2 = np.asarray(metric(x), dtype=float)
            dg2 = np.empty((2, 2))
            for j in range(2):
                h = h_fd * max(1.0, abs(x[j]))
                e = np.zeros(2)
                e[j] = h
                dg2[:, j] = (np.asarray(metric(x + e)) - np.asarray(metric(x - e))) / (2 * h)
            return F, J, g2, dg2

        return DriftModel(name=name, params=np.zeros(1), kernel=kernel)


class MaierStein(DriftModel):
    """x' = x(1 - x^2 - alpha y^2), y' = -y(1 + x^2), isotropic noise."""

    def __init__(self, alpha: float):
        object.__setattr__(self, "name", "maier_stein")
        object.__setattr__(self, "params", np.array([float(alpha)]))
        object.__setattr__(self, "kernel", maier_stein_kernel)

    @property
    def alpha(self) -> float:
        return float(self.params[0])

    def fixed_points(self):
        return [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 0.0])]

    def __repr__(self):
        return f"MaierStein(alpha={self.alpha})"


class DoubleWell(DriftModel):
    """Gradient flow of U(x, y) = (x^2 - 1)^2 / 4 + y^2 / 2."""

    def __init__(self):
        object.__setattr__(self, "name", "double_well")
        object.__setattr__(self, "params", np.zeros(1))
        object.__setattr__(self, "kernel", double_well_kernel)

    @staticmethod
    def potential(x) -> float:
        x = np.asarray(x, dtype=float)
        return (x[..., 0] ** 2 - 1.0) ** 2 / 4.0 + x[..., 1] ** 2 / 2.0

    def fixed_points(self):
        return [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 0.0])]

    def __repr__(self):
        return "DoubleWell()"


def maier_stein_drift(x, alpha):
    return MaierStein(alpha).drift(x)


def gradient_double_well(x):
    """Drift and potential of the double-well baseline."""
    return DoubleWell().drift(x), DoubleWell.potential(x)


# --------------------------------------------------------------------------
# macrospin


_AXES = {
    "z": np.eye(3),
    # chart pole on +x: m = (cos th, sin th cos ph, sin th sin ph)
    "x": np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
}


def separatrix_angle(D: float) -> float:
    """theta_C = arctan(1/sqrt(D)); pi/2 at D = 0."""
    return math.pi / 2 if D == 0 else math.atan(1.0 / math.sqrt(D))


def critical_current(D: float, omega: float = 0.0) -> float:
    if D < 0:
        raise ModelError("D must be >= 0")
    c = math.cos(omega)
    if abs(omega) >= math.pi / 2 or c <= 1e-12:
        raise ModelError("polarizer tilt must satisfy |omega| < pi/2")
    if D > D0:
        return (2.0 / math.pi) * math.sqrt(D * (D + 1.0)) / c
    return (D + 2.0) / (2.0 * c)


def energy(m, D):
    m = np.asarray(m, dtype=float)
    return D * m[..., 0] ** 2 - m[..., 2] ** 2


def _check_unit(m, tol=1e-9):
    m = np.asarray(m, dtype=float)
    if abs(np.linalg.norm(m) - 1.0) > tol:
        raise ModelError(f"magnetization not on the unit sphere: |m| = {np.linalg.norm(m)}")
    return m


def classify_region(m, D, tol=1e-9) -> str:
    m = _check_unit(m)
    e = energy(m, D)
    if abs(e) <= tol:
        return "separatrix"
    if e < 0:
        return "neg_energy_up" if m[2] > 0 else "neg_energy_down"
    return "pos_energy_xplus" if m[0] > 0 else "pos_energy_xminus"


class Macrospin(DriftModel):
    """Biaxial macrospin with spin-transfer torque, in a spherical chart.

    ``axis`` selects the chart pole ('z' is the textbook chart; 'x' keeps the
    easy-axis states at the chart equator and is used for shooting).
    """

    def __init__(self, alpha: float, D: float, I: float, omega: float = 0.0, axis: str = "z"):
        if D < 0:
            raise ModelError("D must be >= 0")
        if axis not in _AXES:
            raise ModelError(f"unknown chart axis {axis!r}")
        n = np.array([math.sin(omega), 0.0, math.cos(omega)])
        params = np.concatenate([[alpha, D, I], n, _AXES[axis].ravel()])
        object.__setattr__(self, "name", "macrospin")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "kernel", macrospin_kernel)
        object.__setattr__(self, "omega", float(omega))
        object.__setattr__(self, "axis", axis)

    @classmethod
    def from_ratios(cls, alpha, D, current_ratio, omega_ratio=0.0, axis="x"):
        """Build from relative units: omega = omega_ratio * theta_C,
        |I| = current_ratio * I_C(D, omega), destabilising sign."""
        omega = omega_ratio * separatrix_angle(D)
        I = -current_ratio * critical_current(D, omega)
        return cls(alpha, D, I, omega, axis)

    alpha = property(lambda self: float(self.params[0]))
    D = property(lambda self: float(self.params[1]))
    I = property(lambda self: float(self.params[2]))
    n_p = property(lambda self: self.params[3:6].copy())
    R = property(lambda self: self.params[6:15].reshape(3, 3).copy())

    def with_axis(self, axis: str) -> "Macrospin":
        return Macrospin(self.alpha, self.D, self.I, self.omega, axis)

    def __repr__(self):
        return (f"Macrospin(alpha={self.alpha}, D={self.D}, I={self.I:.6g}, "
                f"omega={self.omega:.6g}, axis={self.axis!r})")

    # -- chart maps
    def evaluate(self, q):
        q = np.asarray(q, dtype=float)
        if abs(math.sin(q[0])) < POLE_TOL:
            raise PoleChart(f"theta={q[0]} within {POLE_TOL} of the chart pole")
        return super().evaluate(q)

    def to_sphere(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        u = np.stack([np.sin(q[..., 0]) * np.cos(q[..., 1]),
                      np.sin(q[..., 0]) * np.sin(q[..., 1]),
                      np.cos(q[..., 0])], axis=-1)
        return u @ self.R.T

    def from_sphere(self, m) -> np.ndarray:
        u = np.asarray(m, dtype=float) @ self.R
        th = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
        ph = np.arctan2(u[..., 1], u[..., 0])
        return np.stack([th, ph], axis=-1)

    def frame(self, q):
        return chart_frame(np.asarray(q, dtype=float), self.R)

    def tangent_to_sphere(self, q, v):
        """Embed a chart tangent vector (dth, dph) as a 3-vector."""
        _, et, ep = self.frame(q)
        return v[0] * et + v[1] * math.sin(q[0]) * ep

    # -- Cartesian quantities
    def drift_cartesian(self, m) -> np.ndarray:
        m = _check_unit(m)
        return macrospin_drift3(m, self.alpha, self.D, self.I, self.n_p)

    def field(self, m) -> np.ndarray:
        return macrospin_field(np.asarray(m, dtype=float), self.D)

    def energy(self, m):
        return energy(m, self.D)

    def energy_and_rate(self, m):
        """Energy and its rate of change along the deterministic flow.

        The rate is the exact directional derivative grad(eps).A; with the
        dynamics field h = -grad(eps)/2 it equals
        -2 alpha [m x (h + I n_p)].(m x h).
        """
        m = _check_unit(m)
        A = self.drift_cartesian(m)
        grad = np.array([2 * self.D * m[0], 0.0, -2 * m[2]])
        return float(energy(m, self.D)), float(grad @ A)

    def norm_terms(self, m):
        """(|A|^2, |m x h|^2, 2 alpha I n_p.(m x h)) at m."""
        m = np.asarray(m, dtype=float)
        A = macrospin_drift3(m, self.alpha, self.D, self.I, self.n_p)
        mh = np.cross(m, self.field(m))
        return float(A @ A), float(mh @ mh), float(2 * self.alpha * self.I * self.n_p @ mh)

    def stable_point(self) -> np.ndarray:
        """Stable fixed point of the m_z > 0 basin (Newton from +z)."""
        q = self.from_sphere(np.array([0.0, 0.0, 1.0]))
        for _ in range(50):
            F, J, _, _ = self.evaluate(q)
            dq = np.linalg.solve(J, F)
            q = q - dq
            if np.linalg.norm(dq) < 1e-15:
                break
        F, J, _, _ = self.evaluate(q)
        if np.linalg.norm(F) > 1e-10 or np.any(np.linalg.eigvals(J).real >= 0):
            raise ModelError("no stable fixed point near +z")
        return q

    def fixed_points(self):
        return [self.stable_point()]

    def boundary_energy(self) -> float:
        """Energy level of the basin boundary of the m_z > 0 state.

        D >= D0: the eps = 0 separatrix. D < D0: the outermost level where the
        precession-averaged energy rate vanishes (unstable limit cycle), or 0
        if there is none below the separatrix.
        """
        D, I, w = self.D, self.I, self.omega
        if D >= D0:
            return 0.0
        if D == 0.0:
            mz = -I * math.cos(w)
            return -mz * mz if 0.0 < mz < 1.0 else 0.0
        return _averaged_boundary(self)


def _orbit_average_rate(model: Macrospin, e: float, npts: int = 4001) -> float:
    """Precession-averaged d eps/dt on the m_z > 0 orbit of energy e < 0.

    The conservative orbit (alpha = 0) is parametrised by the azimuth about z;
    time weights come from the precession speed.
    """
    D = model.D
    phi = np.linspace(0, 2 * np.pi, npts)
    r = np.sqrt((1 + e) / (1 + D * np.cos(phi) ** 2))
    m = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.clip(1 - r * r, 0, 1))], axis=-1)
    h = np.stack([-D * m[:, 0], np.zeros(npts), m[:, 2]], axis=-1)
    prec = np.cross(m, h)
    # azimuthal rate of the precession, d(phi)/dt = (x vy - y vx)/(x^2 + y^2)
    dphi = (m[:, 0] * prec[:, 1] - m[:, 1] * prec[:, 0]) / (r * r)
    grad = np.stack([2 * D * m[:, 0], np.zeros(npts), -2 * m[:, 2]], axis=-1)
    A = np.array([macrospin_drift3(mi, model.alpha, D, model.I, model.n_p) for mi in m])
    rate = np.einsum("ij,ij->i", grad, A)
    w = 1.0 / np.abs(dphi)
    return float(np.trapezoid(rate * w, phi) / np.trapezoid(w, phi))


def _averaged_boundary(model: Macrospin) -> float:
    from scipy.optimize import brentq

    es = np.linspace(-0.999, -1e-3, 200)
    vals = np.array([_orbit_average_rate(model, e) for e in es])
    idx = np.nonzero(np.diff(np.sign(vals)))[0]
    if len(idx) == 0:
        return 0.0
    k = idx[-1]
    return float(brentq(lambda e: _orbit_average_rate(model, e), es[k], es[k + 1], xtol=1e-12))


def macrospin_drift_spherical(theta, phi, alpha, D, I, omega=0.0):
    """(d theta/dt, d phi/dt) of the deterministic macrospin in the z-polar chart."""
    return Macrospin(alpha, D, I, omega, "z").drift(np.array([theta, phi]))


def macrospin_drift_cartesian(m, alpha, D, I, omega=0.0):
    return Macrospin(alpha, D, I, omega).drift_cartesian(m)


KERNEL_CODES = {maier_stein_kernel: MAIER_STEIN_CODE, double_well_kernel: DOUBLE_WELL_CODE,
                macrospin_kernel: MACROSPIN_CODE}
