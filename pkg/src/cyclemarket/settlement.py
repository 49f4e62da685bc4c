"""Payments, profits and the social-cost split for each mechanism."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dispatch import DispatchSolution, Instance
from .storage import degradation_cost, generation_cost

MECHANISMS = ("social", "pbm", "cbm", "gcd")


class IncompleteSolutionError(ValueError):
    pass


class MixedInstanceError(ValueError):
    pass


class OrderingViolation(AssertionError):
    pass


@dataclass
class MarketOutcome:
    mechanism: str
    dispatch: DispatchSolution
    generator_payments: np.ndarray
    storage_payments: np.ndarray
    generator_profits: np.ndarray
    storage_profits: np.ndarray
    generation_cost: float
    cycling_cost: float
    social_cost: float
    energy_bill: float
    demand: np.ndarray

    @property
    def merchandising_surplus(self) -> float:
        """Energy bill minus everything paid to participants."""
        return self.energy_bill - float(self.generator_payments.sum() + self.storage_payments.sum())

    @property
    def storage_profit(self) -> float:
        return float(self.storage_profits.sum())


def generator_prices(dispatch: DispatchSolution) -> np.ndarray:
    """``Theta_j = lam + eta_lower_j - eta_upper_j`` per generator, shape ``(J, T)``."""
    m = dispatch.multipliers
    try:
        up, lo = m["gen_upper"], m["gen_lower"]
    except KeyError as exc:
        raise IncompleteSolutionError(f"dispatch lacks generator bound multipliers: {exc}") from None
    return dispatch.lam[None, :] + lo - up


def settle(mechanism: str, dispatch: DispatchSolution, inst: Instance) -> MarketOutcome:
    """Pay participants from the dispatch prices and cost everything at true parameters.

    Storage is paid ``theta' nu`` in the cycle market and ``lam' u`` otherwise.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if dispatch.lam is None or not np.all(np.isfinite(dispatch.lam)):
        raise IncompleteSolutionError("dispatch has no usable energy price")
    theta_g = generator_prices(dispatch)
    gen_pay = np.array([float(theta_g[j] @ dispatch.g[j]) for j in range(dispatch.g.shape[0])])
    if mechanism == "cbm":
        if dispatch.theta is None:
            raise IncompleteSolutionError("cycle market dispatch has no cycle prices")
        sto_pay = np.array([float(dispatch.theta[i] @ dispatch.nu[i]) for i in range(dispatch.u.shape[0])])
    else:
        sto_pay = np.array([float(dispatch.lam @ dispatch.u[i]) for i in range(dispatch.u.shape[0])])
    gen_cost = np.array([generation_cost(dispatch.g[j], gp) for j, gp in enumerate(inst.generators)])
    sto_cost = np.array([degradation_cost(dispatch.u[i], sp, check_bounds=False)
                         for i, sp in enumerate(inst.storages)])
    gc, cc = float(gen_cost.sum()), float(sto_cost.sum())
    return MarketOutcome(
        mechanism=mechanism, dispatch=dispatch,
        generator_payments=gen_pay, storage_payments=sto_pay,
        generator_profits=gen_pay - gen_cost, storage_profits=sto_pay - sto_cost,
        generation_cost=gc, cycling_cost=cc, social_cost=gc + cc,
        energy_bill=float(dispatch.lam @ inst.demand), demand=inst.demand.copy(),
    )


@dataclass
class ComparisonRow:
    mechanism: str
    social_cost: float
    cycling_cost: float
    storage_profit: float


def compare(outcomes, checked: bool = False, tol: float = 1e-9) -> list[ComparisonRow]:
    """Tabulate outcomes on one instance; with ``checked`` enforce
    ``CBM <= PBM <= GCD`` in social cost and ``CBM >= PBM`` in storage profit."""
    outcomes = list(outcomes)
    if outcomes:
        ref = outcomes[0].demand
        for o in outcomes[1:]:
            if o.demand.shape != ref.shape or not np.array_equal(o.demand, ref):
                raise MixedInstanceError("outcomes come from different instances")
    rows = [ComparisonRow(o.mechanism, o.social_cost, o.cycling_cost, o.storage_profit)
            for o in outcomes]
    if checked:
        check_orderings({r.mechanism: r for r in rows}, tol)
    return rows


def ordering_failures(by_mech: dict, tol: float = 1e-9) -> list[str]:
    """Violated orderings among whichever of cbm, pbm, gcd are present."""
    out = []

    def cost(m):
        return by_mech[m].social_cost

    if "cbm" in by_mech and "pbm" in by_mech and cost("cbm") > cost("pbm") + tol:
        out.append(f"social cost cbm {cost('cbm'):.9g} > pbm {cost('pbm'):.9g}")
    if "pbm" in by_mech and "gcd" in by_mech and cost("pbm") > cost("gcd") + tol:
        out.append(f"social cost pbm {cost('pbm'):.9g} > gcd {cost('gcd'):.9g}")
    if "cbm" in by_mech and "gcd" in by_mech and cost("cbm") > cost("gcd") + tol:
        out.append(f"social cost cbm {cost('cbm'):.9g} > gcd {cost('gcd'):.9g}")
    if "cbm" in by_mech and "pbm" in by_mech and \
            by_mech["cbm"].storage_profit < by_mech["pbm"].storage_profit - tol:
        out.append("storage profit cbm < pbm")
    return out


def check_orderings(by_mech: dict, tol: float = 1e-9) -> None:
    failures = ordering_failures(by_mech, tol)
    if failures:
        raise OrderingViolation("; ".join(failures))
