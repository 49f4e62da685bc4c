"""Competitive equilibria of the two bidding markets.

Prosumer market: generators bid ``g = alpha * lam`` and storage bids
``u = beta_hat * lam``; the price-taking equilibrium has a closed form.
Cycle market: storage bids depths ``nu = beta * theta``, and ``beta = 1/b``
is optimal whatever ``theta`` is.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from . import rainflow
from .dispatch import Instance, prosumer_clearing, simplified_planner, evaluate_true_cost
from .storage import GeneratorParams, StorageParams, degradation_cost, generation_cost

ALIGNMENT_TOL = 1e-8
MATCH_RTOL = 1e-6
PERTURBATIONS = (1e-3, 1e-2)


class UnsupportedConfigurationError(ValueError):
    pass


class DegenerateDemandError(ValueError):
    pass


@dataclass
class ProsumerEquilibrium:
    alphas: np.ndarray
    beta_hats: np.ndarray
    delta: float
    lam: np.ndarray
    degenerate: bool = False  # some beta_hat is the +inf sentinel

    def schedules(self):
        g = np.outer(self.alphas, self.lam)
        u = np.outer(self.beta_hats, self.lam)
        return g, u


@dataclass
class AlignmentCertificate:
    holds: bool
    gamma: np.ndarray | None
    residual: float
    enumeration_complete: bool


@dataclass
class BestResponseReport:
    passed: bool
    profit: float
    perturbed: dict = field(default_factory=dict)  # bid multiplier -> profit


def _check_positive(values, name):
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return values


def _reference_operator(d, E: float = 1.0) -> rainflow.RateToDepthOperator:
    """Rate-to-depth operator for a storage schedule proportional to ``d``.

    The pattern is scale invariant, so ``u = s * d`` with ``x0`` and ``s``
    chosen so that the SoC profile spans ``[0.05, 0.95]``.
    """
    d = np.asarray(d, dtype=np.float64)
    c = np.concatenate(([0.0], np.cumsum(d)))
    span = c.max() - c.min()
    if span == 0.0:
        return rainflow.rate_to_depth_operator(np.zeros_like(d), E, 0.5)
    s = 0.9 * E / span
    return rainflow.rate_to_depth_operator(s * d, E, 0.95 + s * c.min() / E)


def beta_hat(d, storage: StorageParams) -> float:
    """Equilibrium prosumer bid ``(1/b) * d'd / (d' N' N d)``; ``inf`` if ``N d = 0``."""
    d = np.asarray(d, dtype=np.float64)
    N = _reference_operator(d, storage.E).canonical
    cyc = float(np.sum((N @ d) ** 2))
    if cyc == 0.0:
        return np.inf
    return float(d @ d) / cyc / storage.b


def prosumer_bids(inst: Instance):
    """``(alphas, beta_hats)`` of the prosumer equilibrium.

    Generator intercepts are ignored here, so the bids are also usable for
    instances with ``a != 0`` cleared with affine supply bids.
    """
    alphas = 1.0 / _check_positive([g.c for g in inst.generators], "generator c")
    if inst.storages:
        _check_positive([s.b for s in inst.storages], "storage b")
    betas = np.array([beta_hat(inst.demand, s) for s in inst.storages], dtype=np.float64)
    return alphas, betas


def prosumer_equilibrium(inst: Instance) -> ProsumerEquilibrium:
    """Closed-form price-taking equilibrium of the prosumer market.

    ``alpha_j = 1/c_j``, ``beta_hat_i`` as in :func:`beta_hat`,
    ``lam = delta * d`` with ``1/delta = sum(alpha) + sum(beta_hat)``.

    >>> from cyclemarket.storage import GeneratorParams, StorageParams
    >>> inst = Instance([12.0, 8.0], [GeneratorParams(c=1.0)], [StorageParams(E=1.0, b=1.0)])
    >>> eq = prosumer_equilibrium(inst)
    >>> round(float(eq.beta_hats[0]), 6), round(1.0 / eq.delta, 6)
    (0.52, 1.52)
    """
    if any(g.a != 0.0 for g in inst.generators):
        raise UnsupportedConfigurationError(
            "the closed-form equilibrium assumes zero linear cost coefficients")
    d = inst.demand
    if not np.any(d != 0.0):
        raise DegenerateDemandError("demand is identically zero")
    alphas, betas = prosumer_bids(inst)
    degenerate = bool(np.any(np.isinf(betas)))
    total = alphas.sum() + betas.sum()
    delta = 0.0 if np.isinf(total) else 1.0 / total
    lam = delta * d
    if not degenerate:
        g = np.outer(alphas, lam)
        u = np.outer(betas, lam)
        if np.max(np.abs(g.sum(axis=0) + u.sum(axis=0) - d)) > 1e-10 * max(1.0, np.max(np.abs(d))):
            raise ArithmeticError("equilibrium supply does not balance demand")
    return ProsumerEquilibrium(alphas=alphas, beta_hats=betas, delta=delta, lam=lam,
                               degenerate=degenerate)


def alignment_condition(d, E: float = 1.0) -> AlignmentCertificate:
    """Test whether the prosumer equilibrium is socially optimal for demand ``d``.

    Holds when convex weights ``gamma`` exist with
    ``sum_k gamma_k N_k' N_k d = (d' N' N d / d' d) d`` (canonical ``N`` on
    the right), up to ``1e-8 * ||d||``.
    """
    d = np.asarray(d, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise DegenerateDemandError("demand is identically zero")
    op = _reference_operator(d, E)
    N = op.canonical
    target = float(np.sum((N @ d) ** 2)) / float(d @ d) * d
    cols = np.array([Nk.T @ (Nk @ d) for Nk in op.matrices]).T
    m = cols.shape[1]
    weight = 1e3 * max(1.0, float(np.max(np.abs(cols))))
    A = np.vstack([cols, np.full((1, m), weight)])
    b = np.concatenate([target, [weight]])
    res = lsq_linear(A, b, bounds=(0.0, np.inf), method="bvls", tol=1e-15)
    gamma = res.x
    residual = float(np.linalg.norm(cols @ gamma - target))
    holds = bool(residual <= ALIGNMENT_TOL * norm and abs(gamma.sum() - 1.0) <= 1e-10)
    return AlignmentCertificate(holds=holds, gamma=gamma if holds else None,
                                residual=residual, enumeration_complete=op.enumeration_complete)


def truthful_bids(inst: Instance):
    """``(1/c per generator, 1/b per storage)``."""
    alphas = 1.0 / _check_positive([g.c for g in inst.generators], "generator c")
    betas = 1.0 / _check_positive([s.b for s in inst.storages], "storage b") \
        if inst.storages else np.zeros(0)
    return alphas, betas


# --------------------------------------------------------------------------
# profits


def generator_profit(lam, g, params: GeneratorParams) -> float:
    g = np.asarray(g, dtype=np.float64)
    return float(np.asarray(lam, dtype=np.float64) @ g) - generation_cost(g, params)


def storage_profit_prosumer(lam, u, params: StorageParams) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(np.asarray(lam, dtype=np.float64) @ u) - degradation_cost(u, params, check_bounds=False)


def storage_profit_cycle(theta, nu, params: StorageParams) -> float:
    nu = np.asarray(nu, dtype=np.float64)
    return float(np.asarray(theta, dtype=np.float64) @ nu) - 0.5 * params.b * float(nu @ nu)


def best_response_check(mechanism: str, inst: Instance, bids, participant, prices,
                        tolerance: float = 1e-9) -> BestResponseReport:
    """Check that no scaled bid ``bid * (1 +- eps)`` earns more at fixed prices.

    ``mechanism`` is ``"pbm"`` or ``"cbm"``; ``bids`` is ``(alphas, betas)``;
    ``participant`` is ``("generator", j)`` or ``("storage", i)``; ``prices``
    is ``lam`` for generators and prosumer storage, ``theta_i`` for storage
    in the cycle market.
    """
    kind, idx = participant
    alphas, betas = bids
    prices = np.asarray(prices, dtype=np.float64)
    if kind == "generator":
        params = inst.generators[idx]
        bid = float(alphas[idx])

        def profit(b):
            return generator_profit(prices, b * prices, params)
    elif kind == "storage" and mechanism == "pbm":
        params = inst.storages[idx]
        bid = float(betas[idx])

        def profit(b):
            return storage_profit_prosumer(prices, b * prices, params)
    elif kind == "storage" and mechanism == "cbm":
        params = inst.storages[idx]
        bid = float(betas[idx])

        def profit(b):
            return storage_profit_cycle(prices, b * prices, params)
    else:
        raise ValueError(f"unknown participant {participant!r} for mechanism {mechanism!r}")
    base = profit(bid)
    perturbed = {}
    passed = True
    for eps in PERTURBATIONS:
        for k in (1.0 + eps, 1.0 - eps):
            p = profit(bid * k)
            perturbed[k] = p
            if p > base + tolerance * (1.0 + abs(base)):
                passed = False
    return BestResponseReport(passed=passed, profit=base, perturbed=perturbed)


def prosumer_matches_planner(inst: Instance) -> tuple[bool, float]:
    """Compare the prosumer equilibrium with the planner, power balance only.

    Both schedules are costed at true parameters. Returns
    ``(match, gap)`` with ``gap = equilibrium cost - planner cost``.
    """
    if not inst.storages:
        return True, 0.0
    eq = prosumer_equilibrium(inst)
    if eq.degenerate:
        return False, np.inf
    clear = prosumer_clearing(inst, eq.alphas, eq.beta_hats)
    eq_cost = sum(evaluate_true_cost(inst, clear.g, clear.u))
    plan = simplified_planner(inst)
    gap = eq_cost - plan.objective
    return bool(abs(gap) <= MATCH_RTOL * max(1.0, abs(plan.objective))), float(gap)
