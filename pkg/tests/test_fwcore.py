import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwescape.fwcore import (ClosedCurve, DegenerateEllipse, PhasePoint, Trajectory, accumulate_action,
                             drift_angle, ellipse_axes, eval_hamiltonian, eval_lagrangian, gamma_of_velocity,
                             hamiltonian_flow_rhs, loop_action_in_time, loop_decomposition, momentum_on_ellipse,
                             project_to_zero_energy, psi_angle)
from fwescape.models import DoubleWell, Macrospin, MaierStein, ModelError

MS3 = MaierStein(3.0)
MACRO = Macrospin(0.05, 3.0, -0.4, 0.2, "x")

# points away from fixed points, for both a flat and a curved chart
planar = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)).filter(
    lambda q: np.linalg.norm(MS3.drift(q)) > 1e-3)
sphere = st.tuples(st.floats(0.3, 2.8), st.floats(-3.0, 3.0)).filter(
    lambda q: np.linalg.norm(MACRO.drift(q)) > 1e-3)
models_points = st.one_of(planar.map(lambda q: (MS3, np.array(q))), sphere.map(lambda q: (MACRO, np.array(q))))
angles = st.floats(-math.pi, math.pi)


class TestLagrangian:
    @given(models_points)
    def test_anti_instanton_is_free(self, mq):
        model, x = mq
        assert eval_lagrangian(x, model.drift(x), model) == pytest.approx(0, abs=1e-14)

    def test_value(self):
        x = np.array([0.5, 0.0])
        assert eval_lagrangian(x, -MS3.drift(x), MS3) == pytest.approx(0.28125, rel=1e-14)

    def test_perpendicular(self):
        x = np.array([0.3, 0.4])
        F = MS3.drift(x)
        v = np.array([-F[1], F[0]])
        assert eval_lagrangian(x, v, MS3) == pytest.approx(F @ F, rel=1e-12)

    def test_nonfinite(self):
        with pytest.raises(ModelError):
            eval_lagrangian([0.5, 0.0], [np.nan, 0.0], MS3)


class TestHamiltonian:
    @given(models_points)
    def test_special_momenta(self, mq):
        model, x = mq
        f = model.lowered_drift(x)
        g2 = model.metric(x)
        assert eval_hamiltonian(PhasePoint(x, np.zeros(2)), model) == 0
        assert eval_hamiltonian(PhasePoint(x, -2 * f), model) == pytest.approx(0, abs=1e-10 * max(1, f @ (g2 * f)))
        assert eval_hamiltonian(PhasePoint(x, -f), model) == pytest.approx(-0.5 * f @ (g2 * f), rel=1e-12)

    @given(models_points, st.floats(-3, 3), st.floats(-3, 3))
    def test_legendre_pair(self, mq, p1, p2):
        # L(xdot) + H(p) = p.xdot at xdot = G p + F
        model, x = mq
        p = np.array([p1, p2])
        xd = model.metric(x) * p + model.drift(x)
        L = eval_lagrangian(x, xd, model)
        H = eval_hamiltonian(PhasePoint(x, p), model)
        assert L + H == pytest.approx(p @ xd, abs=1e-9 * max(1, abs(p @ xd)))


class TestFlow:
    def test_fixed_point_equilibrium(self):
        xd, pd = hamiltonian_flow_rhs(PhasePoint([1.0, 0.0], [0.0, 0.0]), MS3)
        assert np.allclose(xd, 0) and np.allclose(pd, 0)

    def test_value(self):
        x = np.array([0.5, 0.0])
        f = MS3.lowered_drift(x)
        xd, _ = hamiltonian_flow_rhs(PhasePoint(x, [-2 * f[0], 0.0]), MS3)
        assert np.allclose(xd, [-0.375, 0.0], atol=1e-15)

    @given(planar)
    def test_gradient_time_reversal(self, q):
        m = DoubleWell()
        x = np.array(q)
        xd, _ = hamiltonian_flow_rhs(PhasePoint(x, -2 * m.lowered_drift(x)), m)
        assert np.allclose(xd, -m.drift(x), atol=1e-12)

    @given(models_points, st.floats(-2, 2), st.floats(-2, 2))
    def test_matches_hamiltonian_gradient(self, mq, p1, p2):
        model, x = mq
        p = np.array([p1, p2])
        xd, pd = hamiltonian_flow_rhs(PhasePoint(x, p), model)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            dHdp = (eval_hamiltonian(PhasePoint(x, p + e), model) - eval_hamiltonian(PhasePoint(x, p - e), model)) / (2 * h)
            dHdx = (eval_hamiltonian(PhasePoint(x + e, p), model) - eval_hamiltonian(PhasePoint(x - e, p), model)) / (2 * h)
            scale = max(1.0, abs(dHdx), abs(dHdp))
            assert xd[k] == pytest.approx(dHdp, abs=1e-6 * scale)
            assert pd[k] == pytest.approx(-dHdx, abs=1e-6 * scale)


class TestEllipse:
    @given(models_points, angles)
    def test_on_shell(self, mq, g):
        model, x = mq
        p = momentum_on_ellipse(x, g, model)
        f = model.lowered_drift(x)
        scale = max(1.0, f @ (model.metric(x) * f))
        assert abs(eval_hamiltonian(PhasePoint(x, p), model)) <= 1e-12 * scale

    @given(models_points)
    def test_special_angles(self, mq):
        model, x = mq
        g0 = drift_angle(x, model)
        f = model.lowered_drift(x)
        tol = 1e-12 * max(1.0, np.abs(f).max())
        assert np.allclose(momentum_on_ellipse(x, g0, model), 0, atol=tol)
        assert np.allclose(momentum_on_ellipse(x, g0 + math.pi, model), -2 * f, atol=tol)

    @given(models_points, angles)
    def test_gamma_round_trip(self, mq, g):
        model, x = mq
        p = momentum_on_ellipse(x, g, model)
        xd = model.metric(x) * p + model.drift(x)
        d = gamma_of_velocity(xd, x, model) - g
        assert abs((d + math.pi) % (2 * math.pi) - math.pi) < 1e-10

    @given(models_points)
    def test_axes(self, mq):
        # semi-axes |f|_G / sqrt(g_i) in the p plane
        model, x = mq
        f = model.lowered_drift(x)
        g2 = model.metric(x)
        assert np.allclose(ellipse_axes(x, model), math.sqrt(f @ (g2 * f)) / np.sqrt(g2))

    def test_isotropic_vertical(self):
        assert gamma_of_velocity([0.0, 1.0], [0.3, 0.2], MS3) == pytest.approx(math.pi / 2)

    def test_anti_instanton_angle(self):
        x = np.array([0.3, 0.2])
        assert gamma_of_velocity(MS3.drift(x), x, MS3) == pytest.approx(drift_angle(x, MS3))

    def test_errors(self):
        with pytest.raises(DegenerateEllipse):
            momentum_on_ellipse([1.0, 0.0], 0.3, MS3)
        with pytest.raises(ModelError):
            gamma_of_velocity([0.0, 0.0], [0.3, 0.2], MS3)


class TestPsi:
    def test_values(self):
        x = np.array([0.4, 0.1])
        F = MS3.drift(x)
        assert psi_angle(F, x, MS3) == pytest.approx(0, abs=1e-7)
        assert psi_angle(-F, x, MS3) == pytest.approx(math.pi, abs=1e-7)
        with pytest.raises(DegenerateEllipse):
            psi_angle([1.0, 0.0], [0.0, 0.0], MS3)

    @given(models_points, angles)
    def test_lagrangian_identity(self, mq, g):
        # on shell L = |f|^2 (1 - cos psi)
        model, x = mq
        p = momentum_on_ellipse(x, g, model)
        xd = model.metric(x) * p + model.drift(x)
        f = model.lowered_drift(x)
        nf2 = f @ (model.metric(x) * f)
        L = eval_lagrangian(x, xd, model)
        assert L == pytest.approx(nf2 * (1 - math.cos(psi_angle(xd, x, model))), abs=1e-9 * max(1, nf2))


class TestProjection:
    @given(models_points, st.floats(-2, 2), st.floats(-2, 2))
    def test_lands_on_shell(self, mq, p1, p2):
        model, x = mq
        p = project_to_zero_energy(x, np.array([p1, p2]), model)
        f = model.lowered_drift(x)
        assert abs(eval_hamiltonian(PhasePoint(x, p), model)) <= 1e-11 * max(1, f @ (model.metric(x) * f))

    def test_center_rejected(self):
        x = np.array([0.4, 0.1])
        with pytest.raises(DegenerateEllipse):
            project_to_zero_energy(x, -MS3.lowered_drift(x), MS3)


def _traj(x, p, S0=0.0):
    n = len(x)
    return Trajectory(np.arange(n, dtype=float), np.asarray(x), np.asarray(p), np.zeros(n), np.full(n, S0))


class TestAction:
    def test_anti_instanton(self):
        x = np.column_stack([np.linspace(0.2, 0.9, 50), np.zeros(50)])
        assert accumulate_action(_traj(x, np.zeros_like(x))) == 0

    def test_gradient_instanton(self):
        # along y = 0 the double-well instanton has p = -2f = grad(2U)
        m = DoubleWell()
        xs = np.linspace(-1.0, 0.0, 20001)
        x = np.column_stack([xs, np.zeros_like(xs)])
        p = np.array([-2 * m.lowered_drift(q) for q in x])
        S = accumulate_action(_traj(x, p))
        assert S == pytest.approx(2 * (m.potential([0.0, 0.0]) - m.potential([-1.0, 0.0])), rel=1e-8)

    def test_uniaxial(self):
        a, I = 0.01, -0.3
        m = Macrospin(a, 0.0, I)
        th = np.linspace(1e-3, math.acos(0.3), 20001)
        x = np.column_stack([th, np.zeros_like(th)])
        p = np.array([[-2 * m.lowered_drift(q)[0], 0.0] for q in x])
        assert accumulate_action(_traj(x, p)) == pytest.approx(a * (1 + I) ** 2, rel=1e-5)

    def test_too_short(self):
        with pytest.raises(ValueError):
            accumulate_action(_traj(np.zeros((1, 2)), np.zeros((1, 2))))


class TestLoops:
    def test_gradient_flux_zero(self, rng):
        for _ in range(5):
            c = rng.uniform(-0.5, 0.5, 2)
            loop = ClosedCurve.ellipse(c, rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0, 3))
            assert abs(loop_decomposition(loop, MaierStein(1.0)).flux) < 1e-12

    def test_flux_is_enclosed_curl(self):
        # curl = 2 (alpha - 1) x y; over a circle of radius r at (a, b) its integral is 2 (alpha-1) a b pi r^2
        a, b, r = 0.5, 0.2, 0.2
        terms = loop_decomposition(ClosedCurve.circle((a, b), r), MaierStein(5.0))
        assert terms.flux == pytest.approx(8 * a * b * math.pi * r * r, rel=1e-10)

    def test_infinitesimal_loop(self):
        terms = loop_decomposition(ClosedCurve.circle((0.4, 0.3), 1e-7), MS3)
        assert abs(terms.total) < 1e-6

    def test_time_route_agrees(self):
        loop = ClosedCurve.ellipse((0.5, 0.3), 0.2, 0.1, 0.4)
        terms = loop_decomposition(loop, MaierStein(5.0))
        assert loop_action_in_time(loop, MaierStein(5.0)) == pytest.approx(terms.total, rel=1e-8)

    def test_open_curve_rejected(self):
        x = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
        with pytest.raises(ValueError):
            loop_decomposition(_traj(x, np.zeros_like(x)), MS3)

    def test_closed_trajectory(self):
        u = np.linspace(0, 2 * np.pi, 20001)
        x = np.column_stack([0.5 + 0.2 * np.cos(u), 0.2 + 0.2 * np.sin(u)])
        t = loop_decomposition(_traj(x, np.zeros_like(x)), MaierStein(5.0))
        ref = loop_decomposition(ClosedCurve.circle((0.5, 0.2), 0.2), MaierStein(5.0))
        assert t.flux == pytest.approx(ref.flux, rel=1e-6)
        assert t.perimeter == pytest.approx(ref.perimeter, rel=1e-6)
