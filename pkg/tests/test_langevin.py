import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.stats import kstest

from conftest import random_unit
from fwescape.langevin import (SimConfig, bimodality, heun_stratonovich_step, macrospin_noise_scale,
                               simulate_escapes, stationary_energies, stationary_energy_cdf)
from fwescape.models import DoubleWell, Macrospin, MaierStein


class TestStep:
    def test_fixed_point_unchanged(self):
        assert np.array_equal(heun_stratonovich_step([1.0, 0.0], MaierStein(3.0), 1e-2, [0.0, 0.0], 0.05), [1.0, 0.0])
        m = Macrospin(0.1, 2.0, 0.0)
        assert np.allclose(heun_stratonovich_step([0, 0, 1.0], m, 1e-2, np.zeros(3), 0.05), [0, 0, 1])

    @pytest.mark.parametrize("h", [4e-2, 2e-2, 1e-2])
    def test_deterministic_limit(self, h):
        # global error of the noiseless Heun scheme is O(h^2)
        m = MaierStein(3.0)
        x = np.array([0.3, 0.4])
        T = 2.0
        for _ in range(int(round(T / h))):
            x = heun_stratonovich_step(x, m, h, [0.0, 0.0], 0.05)
        ref = solve_ivp(lambda t, y: m.drift(y), (0, T), [0.3, 0.4], rtol=1e-12, atol=1e-14).y[:, -1]
        assert np.linalg.norm(x - ref) < 0.5 * h * h

    def test_unit_norm(self, rng):
        m = Macrospin(0.1, 5.0, -0.8, 0.3)
        for s in random_unit(rng, 50):
            out = heun_stratonovich_step(s, m, 1e-2, rng.normal(size=3) * 0.1, 0.5)
            assert abs(np.linalg.norm(out) - 1) < 1e-15

    def test_nonfinite(self):
        with pytest.raises(FloatingPointError):
            heun_stratonovich_step([np.nan, 0.0], MaierStein(3.0), 1e-2, [0.0, 0.0], 0.05)

    @given(st.floats(1e-3, 10), st.floats(1e-3, 10))
    def test_noise_scale(self, a, e):
        assert macrospin_noise_scale(a, e) == pytest.approx(math.sqrt(a * e / (1 + a * a)))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"eps_noise": 0.0}, {"eps_noise": 0.1, "h": -1.0},
                                    {"eps_noise": 0.1, "n_realizations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestEscapes:
    def test_all_censored(self):
        run = simulate_escapes(MaierStein(3.0), SimConfig(eps_noise=1e-6, t_max=20.0, n_realizations=5))
        assert len(run) == 0
        assert run.censored == [0, 1, 2, 3, 4]
        assert run.summary()["censored"] == 5

    def test_deterministic(self):
        cfg = SimConfig(eps_noise=0.2, t_max=1e4, n_realizations=6, seed=7)
        a = simulate_escapes(MaierStein(3.0), cfg)
        b = simulate_escapes(MaierStein(3.0), cfg)
        assert len(a) == len(b) > 0
        for e, f in zip(a, b):
            assert e.exit_time == f.exit_time
            assert np.array_equal(e.exit_point, f.exit_point)
            assert np.array_equal(e.path, f.path)

    def test_streams_independent_of_count(self):
        a = simulate_escapes(MaierStein(3.0), SimConfig(eps_noise=0.2, t_max=1e4, n_realizations=3, seed=3))
        b = simulate_escapes(MaierStein(3.0), SimConfig(eps_noise=0.2, t_max=1e4, n_realizations=6, seed=3))
        first = {e.realization: e.exit_time for e in b}
        for e in a:
            assert first[e.realization] == e.exit_time

    def test_exit_on_separatrix(self):
        run = simulate_escapes(DoubleWell(), SimConfig(eps_noise=0.2, t_max=1e4, n_realizations=8, seed=1))
        assert len(run) == 8
        for e in run:
            # one Heun step moves at most a few sqrt(eps h)
            assert e.exit_point[0] <= 0 and e.exit_point[0] > -0.2
            assert e.path.shape[1] == 3
            assert e.section_y is not None and np.isfinite(e.section_y)

    def test_macrospin_escape(self):
        m = Macrospin.from_ratios(0.1, 2.0, 0.5, 0.0)
        run = simulate_escapes(m, SimConfig(eps_noise=0.1, t_max=1e4, n_realizations=3, seed=2))
        assert len(run) + len(run.censored) == 3
        for e in run:
            assert abs(np.linalg.norm(e.exit_point) - 1) < 1e-12
            assert m.energy(e.exit_point) >= m.boundary_energy() - 1e-12


@pytest.fixture(scope="module")
def energies():
    return stationary_energies(Macrospin(0.5, 2.0, 0.0), 1.0, 1e-2, 20.0, 400, seed=11)


class TestStationary:
    def test_matches_boltzmann(self, energies):
        assert kstest(energies, stationary_energy_cdf(2.0, 1.0)).pvalue > 0.01

    def test_wrong_temperature_rejected(self, energies):
        assert kstest(energies, stationary_energy_cdf(2.0, 3.0)).pvalue < 0.01


class TestBimodality:
    def test_two_clusters(self, rng):
        v = np.concatenate([rng.normal(-1, 0.2, 300), rng.normal(1, 0.2, 300)])
        assert bimodality(v)["bimodal"]

    def test_single_cluster(self, rng):
        r = bimodality(rng.normal(0, 1, 600))
        assert not r["bimodal"]
        assert abs(r["mean"]) < 3 * r["mean_se"]
