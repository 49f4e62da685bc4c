"""Seeded invariant checks used by ``cyclemarket selftest``.

Each check returns a short deterministic detail string; the report is
byte-identical for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dispatch, equilibrium, rainflow, settlement
from .storage import GeneratorParams, StorageParams


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_rates(rng, T, E=1.0, x0=0.5):
    x = np.concatenate(([x0], rng.uniform(0.0, 1.0, T - 1), [x0]))
    return E * np.diff(x)


def check_rainflow_oracle(rng, n=200):
    worst = 0.0
    for _ in range(n):
        T = int(rng.integers(2, 25))
        u = _random_rates(rng, T)
        x = rainflow.soc_profile(u, 0.5, 1.0)
        nu = rainflow.depths_from_rates(u, 1.0, 0.5)
        worst = max(worst, float(np.max(np.abs(nu - rainflow.count_cycles(x).depths))))
        for N in rainflow.rate_to_depth_operator(u, 1.0, 0.5).matrices:
            worst = max(worst, float(np.max(np.abs(N @ u - nu))))
    return worst <= 1e-12, f"max error {worst:.1e}"


def check_pattern_scale_invariance(rng, n=100):
    for _ in range(n):
        T = int(rng.integers(2, 13))
        lam = rng.normal(size=T)
        lam -= lam.mean()
        scale = 0.45 / max(1e-12, float(np.max(np.abs(np.cumsum(lam)))))
        base = rainflow.depth_pattern(scale * lam, 0.5, 1.0)
        beta = float(rng.uniform(0.05, 1.0))
        if not np.array_equal(base, rainflow.depth_pattern(beta * scale * lam, 0.5, 1.0)):
            return False, "pattern changed under scaling"
    return True, f"{n} profiles"


def check_closed_form(rng):
    inst = dispatch.Instance([12.0, 8.0], [GeneratorParams(c=1.0)], [StorageParams(E=1.0, b=1.0)])
    eq = equilibrium.prosumer_equilibrium(inst)
    ok = abs(eq.beta_hats[0] - 0.52) <= 1e-9 and abs(1.0 / eq.delta - 1.52) <= 1e-9
    return ok, f"beta_hat {eq.beta_hats[0]:.6f}, lam [{eq.lam[0]:.6f}, {eq.lam[1]:.6f}]"


def check_toy(rng):
    inst = dispatch.Instance([12.0, 8.0], [GeneratorParams(c=1.0)],
                             [StorageParams(E=1.0, b=1.0, x0=1.0)])
    a, b = equilibrium.truthful_bids(inst)
    out = settlement.settle("cbm", dispatch.cycle_aware_clearing(inst, a, b), inst)
    ok = abs(out.social_cost - 102.0) <= 1e-6 and abs(out.storage_profit - 1.0) <= 1e-6
    return ok, f"social cost {out.social_cost:.6f}, storage profit {out.storage_profit:.6f}"


def check_cycle_market_efficiency(rng, n=10):
    worst = 0.0
    for _ in range(n):
        T = int(rng.integers(2, 9))
        d = rng.uniform(5.0, 15.0, T)
        gens = [GeneratorParams(c=float(rng.uniform(0.5, 2.0)))]
        sto = [StorageParams(E=float(rng.uniform(1.0, 4.0)), b=float(rng.uniform(0.5, 5.0)),
                             u_min=-1.0, u_max=1.0)]
        inst = dispatch.Instance(d, gens, sto)
        a, b = equilibrium.truthful_bids(inst)
        plan = dispatch.social_planner(inst)
        cbm = dispatch.cycle_aware_clearing(inst, a, b)
        worst = max(worst, abs(cbm.objective - plan.objective) / max(1.0, abs(plan.objective)))
    return worst <= 1e-6, f"max relative gap {worst:.1e}"


CHECKS = [
    ("rainflow oracle equivalence", check_rainflow_oracle),
    ("pattern scale invariance", check_pattern_scale_invariance),
    ("prosumer closed form", check_closed_form),
    ("analytic toy", check_toy),
    ("cycle market efficiency", check_cycle_market_efficiency),
]


def run(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results


def format_report(results) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in results]
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
