import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclemarket import equilibrium
from cyclemarket.dispatch import Instance
from cyclemarket.equilibrium import DegenerateDemandError, UnsupportedConfigurationError
from cyclemarket.storage import GeneratorParams, StorageParams


def two_slot(d=(12.0, 8.0), b=1.0, E=1.0, c=1.0):
    return Instance(list(d), [GeneratorParams(c=c)], [StorageParams(E=E, b=b)])


class TestProsumerEquilibrium:
    def test_two_slot_closed_form(self):
        eq = equilibrium.prosumer_equilibrium(two_slot())
        assert eq.beta_hats[0] == pytest.approx(0.52, abs=1e-12)
        assert 1.0 / eq.delta == pytest.approx(1.52, abs=1e-12)
        np.testing.assert_allclose(eq.lam, [7.894737, 5.263158], atol=1e-6)
        d = np.array([12.0, 8.0])
        N = equilibrium._reference_operator(d).canonical
        np.testing.assert_array_equal(N, [[0.0, 0.0], [1.0, 1.0]])
        assert d @ d == 208.0 and float(np.sum((N @ d) ** 2)) == 400.0

    def test_alpha_is_reciprocal_cost(self, rng):
        cs = rng.uniform(0.1, 3.0, 4)
        inst = Instance([5.0, 9.0, 7.0], [GeneratorParams(c=float(c)) for c in cs],
                        [StorageParams(E=2.0, b=3.0)])
        eq = equilibrium.prosumer_equilibrium(inst)
        np.testing.assert_array_equal(eq.alphas, 1.0 / cs)
        assert 1.0 / eq.delta == pytest.approx(eq.alphas.sum() + eq.beta_hats.sum(), rel=1e-10)

    @pytest.mark.parametrize("d0", [1.0, 7.5])
    def test_flat_demand(self, d0):
        eq = equilibrium.prosumer_equilibrium(two_slot(d=(d0, d0)))
        assert eq.beta_hats[0] == pytest.approx(0.5, rel=1e-12)
        assert 1.0 / eq.delta == pytest.approx(1.5, rel=1e-12)

    def test_supply_balances(self, rng):
        for _ in range(20):
            T = int(rng.integers(2, 10))
            inst = Instance(rng.uniform(1, 20, T), [GeneratorParams(c=float(rng.uniform(0.5, 2)))],
                            [StorageParams(E=1.0, b=float(rng.uniform(0.5, 2)))])
            g, u = equilibrium.prosumer_equilibrium(inst).schedules()
            assert np.max(np.abs(g.sum(0) + u.sum(0) - inst.demand)) <= 1e-10 * inst.demand.max()

    def test_linear_cost_rejected(self):
        inst = Instance([12.0, 8.0], [GeneratorParams(c=1.0, a=20.0)], [StorageParams(E=1.0, b=1.0)])
        with pytest.raises(UnsupportedConfigurationError):
            equilibrium.prosumer_equilibrium(inst)

    def test_zero_demand_rejected(self):
        with pytest.raises(DegenerateDemandError):
            equilibrium.prosumer_equilibrium(two_slot(d=(0.0, 0.0)))

    def test_degenerate_pattern_sentinel(self):
        assert equilibrium.beta_hat(np.zeros(3), StorageParams(E=1.0, b=1.0)) == np.inf

    def test_pattern_at_price_equals_pattern_at_demand(self, rng):
        for _ in range(50):
            T = int(rng.integers(2, 12))
            d = rng.uniform(1.0, 20.0, T)
            eq = equilibrium.prosumer_equilibrium(two_slot(d=d))
            np.testing.assert_array_equal(equilibrium._reference_operator(eq.lam).canonical,
                                          equilibrium._reference_operator(d).canonical)


class TestAlignment:
    @pytest.mark.parametrize("d0", [1.0, 3.0])
    def test_flat_two_slot_holds(self, d0):
        cert = equilibrium.alignment_condition([d0, d0])
        assert cert.holds and cert.enumeration_complete
        np.testing.assert_allclose(cert.gamma, [1.0])

    def test_two_slot_fails(self):
        d = np.array([12.0, 8.0])
        N = equilibrium._reference_operator(d).canonical
        np.testing.assert_allclose(N.T @ N @ d, [20.0, 20.0])
        np.testing.assert_allclose(400.0 / 208.0 * d, [23.0769, 15.3846], atol=1e-4)
        cert = equilibrium.alignment_condition(d)
        assert not cert.holds and cert.gamma is None
        assert cert.residual > 1.0

    @pytest.mark.parametrize("T", [1, 2, 3, 5, 8])
    def test_flat_any_horizon(self, T):
        assert equilibrium.alignment_condition(np.full(T, 4.0)).holds

    def test_scale_invariant_in_capacity(self):
        for d in ([5.0, 5.0], [12.0, 8.0], [3.0, 9.0, 4.0]):
            assert equilibrium.alignment_condition(d, 1.0).holds == \
                equilibrium.alignment_condition(d, 50.0).holds

    def test_zero_demand(self):
        with pytest.raises(DegenerateDemandError):
            equilibrium.alignment_condition([0.0, 0.0])


class TestTruthful:
    def test_reciprocals(self):
        inst = Instance([1.0, 2.0], [GeneratorParams(c=0.1)], [StorageParams(E=1.0, b=1.0)])
        a, b = equilibrium.truthful_bids(inst)
        assert a[0] == pytest.approx(10.0) and b[0] == 1.0

    def test_capital_cost_units(self):
        sp = StorageParams.from_capital_cost(E=100.0, B=200.0, rho=5.24e-4)
        _, b = equilibrium.truthful_bids(Instance([1.0, 2.0], [GeneratorParams(c=0.1)], [sp]))
        assert b[0] == pytest.approx(1.0 / (5.24e-4 * 200.0 * 1000.0 * 100.0), rel=1e-12)

    def test_zero_cost_rejected(self):
        inst = Instance([1.0, 2.0], [GeneratorParams(c=1.0)], [StorageParams(E=1.0, b=0.0)])
        with pytest.raises(ValueError):
            equilibrium.truthful_bids(inst)


class TestProfits:
    def test_generator(self):
        assert equilibrium.generator_profit([11, 9], [11, 9], GeneratorParams(c=1.0)) == pytest.approx(101.0)

    def test_generator_linear_term(self):
        p = equilibrium.generator_profit([30, 30], [10, 10], GeneratorParams(c=0.1, a=20.0))
        assert p == pytest.approx(600.0 - 410.0)

    def test_cycle(self):
        assert equilibrium.storage_profit_cycle([1, 1], [1, 1], StorageParams(E=1.0, b=1.0)) == 1.0

    def test_idle_storage(self):
        sp = StorageParams(E=1.0, b=1.0)
        assert equilibrium.storage_profit_prosumer([5.0, 3.0], np.zeros(2), sp) == 0.0


class TestBestResponse:
    def test_equilibrium_bids_pass(self):
        inst = two_slot()
        eq = equilibrium.prosumer_equilibrium(inst)
        bids = (eq.alphas, eq.beta_hats)
        for who in [("generator", 0), ("storage", 0)]:
            assert equilibrium.best_response_check("pbm", inst, bids, who, eq.lam).passed

    def test_doubled_storage_bid_loses(self):
        inst = two_slot()
        eq = equilibrium.prosumer_equilibrium(inst)
        sp = inst.storages[0]
        base = equilibrium.storage_profit_prosumer(eq.lam, eq.beta_hats[0] * eq.lam, sp)
        doubled = equilibrium.storage_profit_prosumer(eq.lam, 2 * eq.beta_hats[0] * eq.lam, sp)
        assert doubled < base
        bad = (eq.alphas, 2 * eq.beta_hats)
        assert not equilibrium.best_response_check("pbm", inst, bad, ("storage", 0), eq.lam).passed

    def test_cycle_market_truthful_for_any_price(self, rng):
        inst = two_slot(b=2.5)
        bids = equilibrium.truthful_bids(inst)
        for _ in range(10):
            theta = rng.uniform(0.0, 5.0, 2)
            assert equilibrium.best_response_check("cbm", inst, bids, ("storage", 0), theta).passed

    def test_cycle_market_maximizer_price_independent(self, rng):
        sp = StorageParams(E=1.0, b=2.5)
        grid = np.linspace(0.05, 1.0, 400)
        argmaxes = set()
        for _ in range(10):
            theta = rng.uniform(0.1, 5.0, 3)
            prof = [equilibrium.storage_profit_cycle(theta, b * theta, sp) for b in grid]
            argmaxes.add(float(grid[int(np.argmax(prof))]))
        assert len(argmaxes) == 1
        assert abs(argmaxes.pop() - 1.0 / 2.5) <= grid[1] - grid[0]

    def test_unknown_participant(self):
        inst = two_slot()
        with pytest.raises(ValueError):
            equilibrium.best_response_check("gcd", inst, ([1.0], [1.0]), ("storage", 0), [1.0, 1.0])


class TestMatchesPlanner:
    def test_flat(self):
        ok, gap = equilibrium.prosumer_matches_planner(two_slot(d=(5.0, 5.0)))
        assert ok and abs(gap) <= 1e-6

    def test_two_slot(self):
        ok, gap = equilibrium.prosumer_matches_planner(two_slot())
        assert not ok and gap > 0

    def test_no_storage(self):
        assert equilibrium.prosumer_matches_planner(Instance([5.0, 9.0], [GeneratorParams(c=1.0)], []))[0]


def _family_instances():
    out = []
    for k in range(15):
        d0 = 1.0 + k
        T = 2 + k % 4
        out.append(Instance(np.full(T, d0), [GeneratorParams(c=0.5 + 0.1 * k)],
                            [StorageParams(E=1.0 + k % 3, b=0.5 + 0.2 * k)]))
        out.append(Instance(np.array([12.0, 8.0]) * (1 + 0.25 * k), [GeneratorParams(c=0.5 + 0.1 * k)],
                            [StorageParams(E=1.0 + k % 3, b=0.5 + 0.2 * k)]))
    return out


@pytest.mark.parametrize("inst", _family_instances(), ids=lambda i: f"d={np.round(i.demand, 2).tolist()}")
def test_alignment_iff_planner_match(inst):
    cert = equilibrium.alignment_condition(inst.demand, inst.storages[0].E)
    match, _ = equilibrium.prosumer_matches_planner(inst)
    if cert.enumeration_complete:
        assert cert.holds == match


@settings(max_examples=40)
@given(st.lists(st.floats(0.5, 20.0), min_size=2, max_size=10), st.floats(0.1, 10.0))
def test_pattern_scale_free_at_demand(d, s):
    d = np.array(d)
    np.testing.assert_array_equal(equilibrium._reference_operator(d).canonical,
                                  equilibrium._reference_operator(s * d).canonical)

