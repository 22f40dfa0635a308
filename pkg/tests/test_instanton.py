import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from fwescape.fwcore import PhasePoint, Trajectory, energy_residual, psi_angle, speed_residual
from fwescape.instanton import (OracleDomainError, ShootingConfig, analytic_phi_of_theta,
                                analytic_uniaxial_action, chart_momenta, compare_to_oracle, detect_crossings,
                                eigenvector_seed, fan_shoot, linearize_fixed_point, shoot)
from fwescape.models import DoubleWell, Macrospin, MaierStein, ModelError


@pytest.fixture(scope="module")
def uniaxial_fan():
    m = Macrospin.from_ratios(0.01, 0.0, 0.3, 0.0)
    return m, fan_shoot(m, None, ShootingConfig(fan_size=4))


@pytest.fixture(scope="module")
def ms3_fan():
    m = MaierStein(3.0)
    return m, fan_shoot(m, [1.0, 0.0], ShootingConfig(fan_size=16))


class TestLinearization:
    def test_gradient_pairing(self):
        m = DoubleWell()
        lin = linearize_fixed_point(m, [1.0, 0.0])
        relax = np.sort(np.linalg.eigvals(m.jacobian([1.0, 0.0])).real)
        assert np.allclose(np.sort(lin.eigenvalues.real[lin.eigenvalues.real > 0]), np.sort(-relax))

    @pytest.mark.parametrize("alpha", [1.0, 3.0, 5.0])
    def test_pm_pairs(self, alpha):
        lin = linearize_fixed_point(MaierStein(alpha), [1.0, 0.0])
        w = np.sort(lin.eigenvalues.real)
        assert abs(w.sum()) < 1e-12
        assert np.allclose(w, -w[::-1])
        # the drift Jacobian at (1, 0) is diag(-2, -2) for every alpha
        assert np.allclose(w[w > 0], [2.0, 2.0])

    def test_anti_instanton_block(self):
        lin = linearize_fixed_point(MaierStein(3.0), [1.0, 0.0])
        stable = lin.eigenvectors[:, lin.eigenvalues.real < 0]
        assert np.allclose(stable[2:], 0, atol=1e-12)

    def test_quasipotential_hessian(self):
        # gradient case: Pi = 2 Hess U
        lin = linearize_fixed_point(DoubleWell(), [1.0, 0.0])
        assert np.all(np.linalg.eigvalsh(lin.Pi) > 0)
        assert np.allclose(lin.Pi, -2 * DoubleWell().jacobian([1.0, 0.0]), atol=1e-10)

    def test_not_fixed_point(self):
        with pytest.raises(ModelError):
            linearize_fixed_point(MaierStein(3.0), [0.5, 0.0])


class TestShoot:
    def test_anti_instanton_relaxes(self):
        m = MaierStein(3.0)
        cfg = ShootingConfig(t_max=30.0)
        tr = shoot(m, PhasePoint([0.8, 0.05], [0.0, 0.0]), cfg)
        assert np.linalg.norm(tr.x[-1] - [1.0, 0.0]) < 1e-6
        assert np.abs(tr.S).max() < 1e-14

    def test_off_shell_seed_rejected(self):
        with pytest.raises(ValueError):
            shoot(MaierStein(3.0), PhasePoint([0.8, 0.05], [1.0, 1.0]))

    def test_uniaxial_exactness(self, uniaxial_fan):
        m, fan = uniaxial_fan
        for tr in fan:
            assert tr.stop_reason == "separatrix"
            q, p, f = chart_momenta(tr, m, "z")
            sel = q[:, 0] > 0.05
            assert np.abs(p[sel, 0] + 2 * f[sel, 0]).max() <= 1e-6
            assert np.abs(p[sel, 1]).max() <= 1e-10
            # precession rate unaltered: phi evolves at the drift rate -cos(theta)
            t, ph = tr.t[sel], np.unwrap(q[sel, 1])
            dphi = np.gradient(ph, t)
            assert np.allclose(dphi[2:-2], -np.cos(q[sel, 0])[2:-2], atol=1e-3)

    def test_uniaxial_action(self, uniaxial_fan):
        m, fan = uniaxial_fan
        for tr in fan:
            assert tr.action == pytest.approx(analytic_uniaxial_action(math.acos(0.3), 0.01, -0.3), rel=1e-5)

    def test_invariants(self, uniaxial_fan, ms3_fan):
        for m, fan in (uniaxial_fan, ms3_fan):
            for tr in fan:
                assert energy_residual(tr, m).max() < 1e-8
                assert speed_residual(tr, m).max() < 1e-6


class TestFan:
    def test_gradient_single(self):
        m = DoubleWell()
        (tr,) = fan_shoot(m, [-1.0, 0.0], ShootingConfig(fan_size=1))
        # reversed relaxation: the action is twice the potential climbed
        U = np.array([m.potential(x) for x in tr.x]) - m.potential([-1.0, 0.0])
        assert np.allclose(tr.S, 2 * U, rtol=1e-6, atol=1e-9)
        inner = [i for i in range(len(tr)) if np.linalg.norm(m.drift(tr.x[i])) > 1e-4]
        for i in inner:
            xd = m.metric(tr.x[i]) * tr.p[i] + m.drift(tr.x[i])
            assert np.allclose(xd, -m.drift(tr.x[i]), atol=1e-6)
            assert psi_angle(xd, tr.x[i], m) == pytest.approx(math.pi, abs=1e-3)

    def test_ms3_optimum_on_axis(self, ms3_fan):
        _, fan = ms3_fan
        hits = [tr for tr in fan if tr.stop_reason == "target"]
        assert hits
        best = min(hits, key=lambda t: t.action)
        assert np.abs(best.x[:, 1]).max() <= 1e-3
        assert best.action == pytest.approx(0.5, rel=1e-4)

    def test_mirror_symmetry(self):
        m = MaierStein(5.0)
        lin = linearize_fixed_point(m, [1.0, 0.0])
        cfg = ShootingConfig()
        for beta in (0.3, 1.1, 2.0):
            a = shoot(m, eigenvector_seed(m, lin, beta, 1e-3), cfg)
            b = shoot(m, eigenvector_seed(m, lin, -beta, 1e-3), cfg)
            assert abs(a.action - b.action) <= 1e-9
            n = min(len(a), len(b), 200)
            assert np.allclose(a.x[:n, 1], -b.x[:n, 1], atol=1e-8)

    def test_unstable_start_rejected(self):
        with pytest.raises(ModelError):
            fan_shoot(MaierStein(3.0), [0.0, 0.0])


def _line(a, b, n=50, p=(0.0, 0.0)):
    x = np.linspace(a, b, n)
    return Trajectory(np.arange(n, dtype=float), x, np.tile(p, (n, 1)), np.zeros(n), np.zeros(n))


class TestCrossings:
    def test_disjoint(self):
        rep = detect_crossings([_line([0, 0], [1, 0], p=(1, 0)), _line([0, 1], [1, 1], p=(0, 1))],
                               momentum_tol=0.1)
        assert len(rep) == 0

    def test_transverse(self):
        rep = detect_crossings([_line([0, 0], [1, 1], p=(1, 0)), _line([0, 1], [1, 0], p=(0, 1))],
                               momentum_tol=0.1)
        assert len(rep) == 1
        c = rep.crossings[0]
        assert np.allclose(c.point, [0.5, 0.5], atol=1e-12)
        assert c.mismatch >= 0.1 and c.distance <= rep.match_tol

    def test_same_momentum_ignored(self):
        rep = detect_crossings([_line([0, 0], [1, 1], p=(1, 0)), _line([0, 1], [1, 0], p=(1, 0))],
                               momentum_tol=0.1)
        assert len(rep) == 0

    def test_ms5_fan_crosses_on_axis(self):
        m = MaierStein(5.0)
        fan = fan_shoot(m, [1.0, 0.0], ShootingConfig(fan_size=32))
        rep = detect_crossings(fan)
        assert len(rep) > 0
        on_axis = [c for c in rep.crossings if abs(c.point[1]) < 0.05 and 0 < c.point[0] < 1]
        assert on_axis

    def test_ms3_fan_escape_paths_do_not_cross(self, ms3_fan):
        _, fan = ms3_fan
        hits = [tr for tr in fan if tr.stop_reason == "target"]
        assert len(detect_crossings(hits)) == 0


class TestOracle:
    def test_zero_current(self):
        th = np.linspace(0.2, 1.4, 9)
        assert np.allclose(analytic_phi_of_theta(th, 0.01, 0.0), np.log(np.tan(th / 2)) / 0.01)

    def test_quadrature(self):
        a, I = 0.01, -0.3

        def integrand(t):
            return math.cos(t) / ((I + math.cos(t)) * math.sin(t)) / a

        ref = quad(integrand, math.pi / 8, math.pi / 4, epsabs=0, epsrel=1e-13)[0]
        got = analytic_phi_of_theta(math.pi / 4, a, I) - analytic_phi_of_theta(math.pi / 8, a, I)
        assert got == pytest.approx(ref, rel=1e-8)

    @given(st.floats(-0.95, 0.95))
    def test_monotone(self, I):
        ts = math.acos(-I)
        th = np.linspace(1e-3, ts - 1e-3, 400)
        ph = analytic_phi_of_theta(th, 0.01, I)
        d = np.diff(ph)
        # integrand sign is that of cos(theta) (I + cos > 0 on the domain)
        c = np.cos(0.5 * (th[1:] + th[:-1]))
        assert np.all(((d > 0) == (c > 0)) | (np.abs(c) < 1e-2))

    def test_domain(self):
        with pytest.raises(OracleDomainError):
            analytic_phi_of_theta(0.0, 0.01, -0.3)
        with pytest.raises(OracleDomainError):
            analytic_phi_of_theta(math.acos(0.3), 0.01, -0.3)
        with pytest.raises(OracleDomainError):
            analytic_uniaxial_action(2.0, 0.01, -0.3)
        with pytest.raises(OracleDomainError):
            analytic_phi_of_theta(0.5, 0.01, 1.0)

    def test_action_values(self):
        assert analytic_uniaxial_action(0.0, 0.01, -0.3) == 0
        assert analytic_uniaxial_action(math.acos(0.3), 0.01, -0.3) == pytest.approx(0.0049, rel=1e-12)
        a, I = 0.01, -0.3
        ref = quad(lambda t: 2 * a * (I + math.cos(t)) * math.sin(t), 0, math.acos(0.3))[0]
        assert ref == pytest.approx(0.0049, rel=1e-12)

    @given(st.floats(-0.999, -0.9))
    def test_barrier_vanishes(self, I):
        assert analytic_uniaxial_action(math.acos(-I), 0.01, I) == pytest.approx(0.01 * (1 + I) ** 2, abs=1e-15)

    def test_self_consistency(self):
        a, I = 0.01, -0.3
        th = np.linspace(0.05, math.acos(0.3) - 0.01, 60000)
        ph = -analytic_phi_of_theta(th, a, I) + 1.7
        m = np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
        n = len(th)
        tr = Trajectory(np.arange(n, dtype=float), np.column_stack([th, ph]), np.zeros((n, 2)),
                        np.zeros(n), np.zeros(n), m=m)
        rep = compare_to_oracle(tr, a, I)
        assert rep.rms_raw < 1e-6  # linear-interpolation floor

    def test_fan_agreement(self, uniaxial_fan):
        m, fan = uniaxial_fan
        for tr in fan:
            assert compare_to_oracle(tr, m.alpha, m.I).rms <= 1e-2
