import numpy as np
import pytest
from hypothesis import given, strategies as st

from cyclemarket import storage
from cyclemarket.storage import GeneratorParams, StorageParams

from conftest import random_rates


def sp(**kw):
    base = dict(E=1.0, b=1.0, x0=0.5, u_min=-1.0, u_max=1.0)
    base.update(kw)
    return StorageParams(**base)


class TestParams:
    def test_cost_coefficient_units(self):
        # one full cycle of depth d costs rho * B[$/kWh] * 1000 * E * d^2
        p = StorageParams.from_capital_cost(E=100.0, B=200.0, rho=5.24e-4)
        assert p.b == pytest.approx(5.24e-4 * 200.0 * 1000.0 * 100.0, rel=1e-12)
        u = 100.0 * np.array([0.3, -0.3])
        assert storage.degradation_cost(u, p) == pytest.approx(p.b * 0.3 ** 2, rel=1e-12)

    def test_rate_limits_default_quarter_capacity(self):
        p = StorageParams.from_capital_cost(E=80.0, B=100.0, rho=1e-4)
        assert (p.u_min, p.u_max) == (-20.0, 20.0) and p.x0 == 0.5

    @pytest.mark.parametrize("kw", [dict(E=0.0), dict(b=-1.0), dict(x0=1.5),
                                    dict(u_min=0.5), dict(u_max=-0.5)])
    def test_invalid_storage(self, kw):
        with pytest.raises(ValueError):
            sp(**kw)

    def test_inconsistent_b_rejected(self):
        with pytest.raises(ValueError):
            StorageParams(E=1.0, b=3.0, B=200.0, rho=1e-4)

    @pytest.mark.parametrize("kw", [dict(c=0.0), dict(c=1.0, g_min=2.0, g_max=1.0)])
    def test_invalid_generator(self, kw):
        with pytest.raises(ValueError):
            GeneratorParams(**kw)


class TestSoc:
    def test_recursion(self):
        x = storage.soc_from_rates(np.array([-0.3, 0.1, -0.4, 0.5]), sp(x0=0.2))
        np.testing.assert_allclose(x, [0.2, 0.5, 0.4, 0.8, 0.3], atol=1e-15)

    def test_idle(self):
        np.testing.assert_array_equal(storage.soc_from_rates(np.zeros(3), sp(x0=0.7)), [0.7] * 4)

    def test_round_trip(self):
        np.testing.assert_allclose(storage.soc_from_rates([0.5, -0.5], sp()), [0.5, 0.0, 0.5])


class TestFeasibility:
    def test_feasible(self):
        assert storage.check_feasible([1.0, -1.0], sp(x0=1.0)) == []

    def test_rate_and_soc_violations(self):
        v = storage.check_feasible([2.0, -2.0], sp(x0=1.0))
        kinds = sorted((x.constraint, x.slot) for x in v)
        assert kinds == [("rate-lower", 1), ("rate-upper", 0), ("soc-lower", 0)]
        assert next(x for x in v if x.constraint == "soc-lower").magnitude == pytest.approx(1.0)

    def test_periodicity(self):
        v = storage.check_feasible([1.0, 0.0], sp(x0=1.0, u_max=2.0))
        assert [x.constraint for x in v] == ["periodicity"]

    def test_periodicity_scales_with_capacity(self):
        assert storage.check_feasible([5e-8, -0.0], sp(E=10.0)) == []


class TestCosts:
    def test_fig1_degradation(self):
        u = np.array([-0.3, 0.1, -0.4, 0.5])
        assert storage.degradation_cost(u, sp(x0=0.2)) == pytest.approx(0.315, abs=1e-14)

    def test_zero(self):
        assert storage.degradation_cost(np.zeros(4), sp()) == 0.0

    def test_unit_swing(self):
        assert storage.degradation_cost([1.0, -1.0], sp(x0=1.0)) == pytest.approx(1.0)

    @pytest.mark.parametrize("g,c,a,expected", [([10, 10], 1.0, 0.0, 100.0),
                                                 ([11, 9], 1.0, 0.0, 101.0),
                                                 ([10, 10], 0.1, 20.0, 410.0)])
    def test_generation(self, g, c, a, expected):
        assert storage.generation_cost(g, GeneratorParams(c=c, a=a)) == pytest.approx(expected)


class TestMatrices:
    def test_difference(self):
        np.testing.assert_array_equal(storage.difference_matrix(2), [[-1, 1, 0], [0, -1, 1]])

    def test_cumulative(self):
        np.testing.assert_array_equal(storage.cumulative_matrix(2, 1.0), [[1, 0], [1, 1]])

    def test_difference_restates_recursion(self):
        x = np.array([0.5, 0.0, 0.5])
        np.testing.assert_allclose(storage.difference_matrix(2) @ x, [-0.5, 0.5])

    @pytest.mark.parametrize("T", [0, -1])
    def test_bad_horizon(self, T):
        with pytest.raises(ValueError):
            storage.difference_matrix(T)
        with pytest.raises(ValueError):
            storage.cumulative_matrix(T)


def test_convexity_sampling(rng):
    p = sp(E=2.0, b=3.0, u_min=-np.inf, u_max=np.inf)
    for _ in range(500):
        T = int(rng.integers(2, 13))
        u1, u2 = random_rates(rng, T, E=2.0), random_rates(rng, T, E=2.0)
        th = float(rng.uniform(0.0, 1.0))
        mix = storage.degradation_cost(th * u1 + (1 - th) * u2, p)
        assert mix <= th * storage.degradation_cost(u1, p) \
            + (1 - th) * storage.degradation_cost(u2, p) + 1e-9


@given(st.integers(2, 16), st.floats(0.01, 1.0), st.integers(0, 2 ** 32 - 1))
def test_homogeneous_degree_two(T, beta, seed):
    u = random_rates(np.random.default_rng(seed), T)
    p = sp(u_min=-np.inf, u_max=np.inf)
    assert storage.degradation_cost(beta * u, p) == pytest.approx(
        beta ** 2 * storage.degradation_cost(u, p), rel=1e-12, abs=1e-15)


@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 2 ** 32 - 1))
def test_soc_range_identity(T, x0, seed):
    u = np.random.default_rng(seed).uniform(-0.5, 0.5, T)
    p = sp(x0=x0, u_min=-np.inf, u_max=np.inf)
    x = storage.soc_from_rates(u, p)
    np.testing.assert_allclose(storage.cumulative_matrix(T) @ u, x0 - x[1:], atol=1e-14)
    in_range = bool(np.all(x >= -1e-8) and np.all(x <= 1 + 1e-8))
    soc_ok = not any(v.constraint.startswith("soc") for v in storage.check_feasible(u, p))
    assert in_range == soc_ok
