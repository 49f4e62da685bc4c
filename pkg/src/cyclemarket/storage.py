"""Storage physics, degradation cost and generator cost.

Units: power in MW over one-hour slots (so MW and MWh per slot coincide),
capacity ``E`` in MWh, capital cost ``B`` in $/kWh. The degradation cost
coefficient is ``b = rho * (1000 * B) * E`` dollars, applied to depths
measured as fractions of ``E``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rainflow

RATE_TOL = 1e-8
SOC_TOL = 1e-8
PERIODICITY_TOL = 1e-8
KWH_PER_MWH = 1000.0


@dataclass(frozen=True)
class GeneratorParams:
    c: float
    a: float = 0.0
    g_min: float = 0.0
    g_max: float = np.inf

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"generator quadratic coefficient must be positive, got {self.c}")
        if self.g_min > self.g_max:
            raise ValueError("g_min exceeds g_max")


@dataclass(frozen=True)
class StorageParams:
    """Storage unit.

    ``b`` is the degradation cost coefficient in dollars. Use
    :meth:`from_capital_cost` to derive it from capital cost and stress
    coefficient; ``B`` and ``rho`` are then kept for reporting.
    """

    E: float
    b: float
    x0: float = 0.5
    u_min: float = -np.inf
    u_max: float = np.inf
    B: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"storage capacity must be positive, got {self.E}")
        if self.b < 0:
            raise ValueError("degradation cost coefficient must be nonnegative")
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError(f"initial SoC must lie in [0, 1], got {self.x0}")
        if not self.u_min <= 0.0 <= self.u_max:
            raise ValueError("rate bounds must satisfy u_min <= 0 <= u_max")
        if self.B is not None and self.rho is not None:
            expected = cost_coefficient(self.rho, self.B, self.E)
            if abs(expected - self.b) > 1e-12 * max(1.0, abs(expected)):
                raise ValueError(f"b={self.b} inconsistent with rho*B*E={expected}")

    @classmethod
    def from_capital_cost(cls, E: float, B: float, rho: float, x0: float = 0.5,
                          rate_fraction: float = 0.25) -> "StorageParams":
        """Storage with ``b = rho * B * E`` and symmetric rate limits ``±rate_fraction * E``."""
        return cls(E=E, b=cost_coefficient(rho, B, E), x0=x0,
                   u_min=-rate_fraction * E, u_max=rate_fraction * E, B=B, rho=rho)


def cost_coefficient(rho: float, B: float, E: float) -> float:
    """``b`` in dollars from ``rho``, ``B`` [$/kWh] and ``E`` [MWh]."""
    return rho * B * KWH_PER_MWH * E


def soc_from_rates(u, params: StorageParams) -> np.ndarray:
    return rainflow.soc_profile(u, params.x0, params.E)


def difference_matrix(T: int) -> np.ndarray:
    """``A`` with ``A @ x = -u / E`` for the SoC recursion."""
    if T < 1:
        raise ValueError("T must be at least 1")
    A = np.zeros((T, T + 1))
    idx = np.arange(T)
    A[idx, idx] = -1.0
    A[idx, idx + 1] = 1.0
    return A


def cumulative_matrix(T: int, E: float = 1.0) -> np.ndarray:
    """``Ã = tril(ones) / E`` so that ``x[1:] = x0 - Ã @ u``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return np.tril(np.ones((T, T))) / E


@dataclass(frozen=True)
class Violation:
    constraint: str
    slot: int | None
    magnitude: float


def check_feasible(u, params: StorageParams) -> list[Violation]:
    """List every violated storage constraint; empty when feasible."""
    u = np.asarray(u, dtype=np.float64)
    T = u.shape[0]
    out = []
    for t in range(T):
        if u[t] > params.u_max + RATE_TOL:
            out.append(Violation("rate-upper", t, float(u[t] - params.u_max)))
        if u[t] < params.u_min - RATE_TOL:
            out.append(Violation("rate-lower", t, float(params.u_min - u[t])))
    net = float(np.sum(u))
    if abs(net) > PERIODICITY_TOL * params.E:
        out.append(Violation("periodicity", None, abs(net)))
    # (x0 - 1) <= Ã u <= x0, one row per slot t -> SoC at node t + 1
    drawn = cumulative_matrix(T, params.E) @ u
    for t in range(T):
        if drawn[t] > params.x0 + SOC_TOL:
            out.append(Violation("soc-lower", t, float(drawn[t] - params.x0)))
        if drawn[t] < params.x0 - 1.0 - SOC_TOL:
            out.append(Violation("soc-upper", t, float(params.x0 - 1.0 - drawn[t])))
    return out


def degradation_cost(u, params: StorageParams, check_bounds: bool = True) -> float:
    """``(b / 2) * ||nu||^2`` with ``nu`` the Rainflow depths of ``u``."""
    nu = rainflow.depths_from_rates(u, params.E, params.x0, check_bounds=check_bounds)
    return 0.5 * params.b * float(nu @ nu)


def generation_cost(g, params: GeneratorParams) -> float:
    g = np.asarray(g, dtype=np.float64)
    return 0.5 * params.c * float(g @ g) + params.a * float(np.sum(g))
