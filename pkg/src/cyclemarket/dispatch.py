"""Dispatch problems: social planner, prosumer and cycle-aware clearing, GCD.

All four share one variable layout ``z = [g_1, ..., g_J, u_1, ..., u_S]``
(each block of length ``T``) and one constraint set: power balance,
periodicity, SoC range, rate and generator bounds. The storage cost
``(w/2) ||N(u) u||^2`` is piecewise quadratic; :func:`minimize_piecewise`
handles it by freezing ``N`` at the current iterate, solving the resulting
QP and repeating. When the iteration cycles between patterns the optimum
sits on a kink; the patterns in the cycle are then locked equal and the
QP is re-solved on that face. A projected subgradient method is the last
resort.

Prices: ``lam`` is the marginal cost of demand, i.e. ``-y`` for the
balance-row multiplier ``y`` in the convention of :mod:`cyclemarket.qp`.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, minimize_scalar

from . import _kernels, qp as qpsolve, rainflow
from .storage import GeneratorParams, StorageParams, cumulative_matrix, degradation_cost, generation_cost

log = logging.getLogger(__name__)

MAX_OUTER = 200
SUBGRADIENT_ITERS = 5000
CERT_TOL = 1e-6


class DispatchError(Exception):
    pass


class DegenerateClearingError(DispatchError):
    pass


class ConfigurationError(DispatchError):
    pass


@dataclass
class Instance:
    demand: np.ndarray
    generators: list[GeneratorParams]
    storages: list[StorageParams] = field(default_factory=list)

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=np.float64).reshape(-1)
        if self.demand.size == 0:
            raise ValueError("demand profile is empty")
        if not np.all(np.isfinite(self.demand)):
            raise ValueError("demand contains non-finite values")
        self.generators = list(self.generators)
        self.storages = list(self.storages)
        cap = sum(g.g_max for g in self.generators) + sum(s.u_max for s in self.storages)
        if cap < self.demand.max():
            warnings.warn("total generation and discharge capacity is below peak demand",
                          stacklevel=2)

    @property
    def T(self) -> int:
        return self.demand.shape[0]

    def with_storages(self, storages) -> "Instance":
        return Instance(self.demand, self.generators, list(storages))


@dataclass
class DispatchSolution:
    mechanism: str
    g: np.ndarray  # (J, T)
    u: np.ndarray  # (S, T)
    nu: np.ndarray  # (S, T)
    x: np.ndarray  # (S, T + 1)
    lam: np.ndarray
    objective: float
    theta: np.ndarray | None = None
    multipliers: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True
    method: str = "qp"
    gammas: list = field(default_factory=list)
    operators: list = field(default_factory=list)
    residual: float = 0.0
    hidden_cost: float | None = None

    def balance_residual(self, demand) -> float:
        return float(np.max(np.abs(demand - self.g.sum(axis=0) - self.u.sum(axis=0))))


# --------------------------------------------------------------------------
# problem assembly


class _Assembly:
    """Constraint data and cost weights for one dispatch problem."""

    def __init__(self, inst: Instance, gen_weights, gen_linear, sto_weights,
                 physical: bool = True):
        self.inst = inst
        T = inst.T
        J, S = len(inst.generators), len(inst.storages)
        self.T, self.J, self.S = T, J, S
        self.n = (J + S) * T
        self.gen_weights = np.asarray(gen_weights, dtype=np.float64)
        self.gen_linear = np.asarray(gen_linear, dtype=np.float64)
        self.sto_weights = np.asarray(sto_weights, dtype=np.float64)
        self.physical = physical
        I = np.eye(T)
        balance = np.hstack([I] * (J + S)) if J + S else np.zeros((T, 0))
        eq = [balance]
        beq = [inst.demand]
        if physical:
            for i in range(S):
                row = np.zeros((1, self.n))
                row[0, self.ublock(i)] = 1.0
                eq.append(row)
                beq.append([0.0])
        self.Aeq = np.vstack(eq)
        self.beq = np.concatenate([np.asarray(b, dtype=np.float64) for b in beq])
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for j, gp in enumerate(inst.generators):
            lo[self.gblock(j)] = gp.g_min
            hi[self.gblock(j)] = gp.g_max
        Ain = np.zeros((0, self.n))
        lin_lo = np.zeros(0)
        lin_hi = np.zeros(0)
        if physical:
            rows = []
            for i, sp in enumerate(inst.storages):
                lo[self.ublock(i)] = sp.u_min
                hi[self.ublock(i)] = sp.u_max
                R = np.zeros((T, self.n))
                R[:, self.ublock(i)] = cumulative_matrix(T, sp.E)
                rows.append(R)
            if rows:
                Ain = np.vstack(rows)
                lin_lo = np.concatenate([np.full(T, sp.x0 - 1.0) for sp in inst.storages])
                lin_hi = np.concatenate([np.full(T, sp.x0) for sp in inst.storages])
        self.Ain, self.lin_lo, self.lin_hi = Ain, lin_lo, lin_hi
        self.var_lo, self.var_hi = lo, hi
        q = np.zeros(self.n)
        for j in range(J):
            q[self.gblock(j)] = self.gen_linear[j]
        self.q = q

    def gblock(self, j):
        return slice(j * self.T, (j + 1) * self.T)

    def ublock(self, i):
        return slice((self.J + i) * self.T, (self.J + i + 1) * self.T)

    def split(self, z):
        z = np.asarray(z)
        g = np.array([z[self.gblock(j)] for j in range(self.J)]).reshape(self.J, self.T)
        u = np.array([z[self.ublock(i)] for i in range(self.S)]).reshape(self.S, self.T)
        return g, u

    def storage_matrix(self, i, P):
        E = self.inst.storages[i].E
        N = P / E
        return self.sto_weights[i] * (N.T @ N)

    def qp(self, patterns, region=None) -> qpsolve.QuadraticProgram:
        Q = np.zeros((self.n, self.n))
        for j in range(self.J):
            b = self.gblock(j)
            Q[b, b] = self.gen_weights[j] * np.eye(self.T)
        for i in range(self.S):
            b = self.ublock(i)
            Q[b, b] = self.storage_matrix(i, patterns[i])
        Ain, lo, hi = self.Ain, self.lin_lo, self.lin_hi
        if region is not None and region.shape[0]:
            Ain = np.vstack([Ain, region])
            lo = np.concatenate([lo, np.full(region.shape[0], -np.inf)])
            hi = np.concatenate([hi, np.zeros(region.shape[0])])
        return qpsolve.QuadraticProgram(Q=Q, q=self.q, Aeq=self.Aeq, beq=self.beq, Ain=Ain,
                                        lin_lower=lo, lin_upper=hi,
                                        var_lower=self.var_lo, var_upper=self.var_hi)

    def pieces_at(self, z):
        """Pattern and region rows (in ``z`` coordinates) of a piece containing ``z``."""
        _, u = self.split(z)
        patterns, rows = [], []
        for i, sp in enumerate(self.inst.storages):
            P, R = rainflow.piece_region(u[i], sp.x0, sp.E)
            patterns.append(P)
            full = np.zeros((R.shape[0], self.n))
            full[:, self.ublock(i)] = R
            rows.append(full)
        region = np.vstack(rows) if rows else np.zeros((0, self.n))
        return patterns, region

    def patterns_at(self, z):
        _, u = self.split(z)
        return [rainflow.depth_pattern(u[i], sp.x0, sp.E) for i, sp in enumerate(self.inst.storages)]

    def true_objective(self, z) -> float:
        g, u = self.split(z)
        val = 0.0
        for j in range(self.J):
            val += 0.5 * self.gen_weights[j] * float(g[j] @ g[j]) + self.gen_linear[j] * float(g[j].sum())
        for i, sp in enumerate(self.inst.storages):
            nu = rainflow.depth_pattern(u[i], sp.x0, sp.E) @ u[i] / sp.E
            val += 0.5 * self.sto_weights[i] * float(nu @ nu)
        return val

    def subgradient(self, z):
        g, u = self.split(z)
        out = np.zeros(self.n)
        for j in range(self.J):
            out[self.gblock(j)] = self.gen_weights[j] * g[j] + self.gen_linear[j]
        for i, sp in enumerate(self.inst.storages):
            P = rainflow.depth_pattern(u[i], sp.x0, sp.E)
            out[self.ublock(i)] = self.storage_matrix(i, P) @ u[i]
        return out


# --------------------------------------------------------------------------
# certification of stationarity at nonsmooth points


@dataclass
class Certificate:
    gammas: list
    operators: list
    patterns: list
    active: list  # (row, side) pairs into the stacked inequality rows
    y: np.ndarray
    z_signed: np.ndarray  # multipliers for [Ain rows, box rows], + upper / - lower
    residual: float
    complete: bool


def certify(asm: _Assembly, z, pattern_sets=None, cap: int = 64) -> Certificate:
    """Find convex weights over the ``N_k`` meeting at ``z`` and multipliers
    that satisfy stationarity there; report the residual achieved.

    ``pattern_sets`` (one list per storage) replaces the local enumeration.
    """
    g, u = asm.split(z)
    n = asm.n
    scale = max(1.0, float(np.max(np.abs(asm.subgradient(z)), initial=0.0)))
    base = np.zeros(n)
    for j in range(asm.J):
        base[asm.gblock(j)] = asm.gen_weights[j] * g[j] + asm.gen_linear[j]
    cols, lower, upper = [], [], []
    ops, complete = [], pattern_sets is None
    given, pattern_sets = pattern_sets, []
    gamma_slices = []
    for i, sp in enumerate(asm.inst.storages):
        if given is None:
            pats, ok = rainflow.adjacent_patterns(u[i], sp.E, sp.x0, cap=cap)
            complete &= ok
        else:
            pats = given[i]
        pattern_sets.append(pats)
        ops.append([P / sp.E for P in pats])
        start = len(cols)
        for P in pats:
            col = np.zeros(n)
            col[asm.ublock(i)] = asm.storage_matrix(i, P) @ u[i]
            cols.append(col)
            lower.append(0.0)
            upper.append(np.inf)
        gamma_slices.append(slice(start, len(cols)))
    n_gamma = len(cols)
    for r in range(asm.Aeq.shape[0]):
        cols.append(asm.Aeq[r])
        lower.append(-np.inf)
        upper.append(np.inf)
    # active inequality rows: Ain then finite box rows
    st_rows, st_lo, st_hi = [], [], []
    for r in range(asm.Ain.shape[0]):
        st_rows.append(asm.Ain[r])
        st_lo.append(asm.lin_lo[r])
        st_hi.append(asm.lin_hi[r])
    for k in range(n):
        if np.isfinite(asm.var_lo[k]) or np.isfinite(asm.var_hi[k]):
            e = np.zeros(n)
            e[k] = 1.0
            st_rows.append(e)
            st_lo.append(asm.var_lo[k])
            st_hi.append(asm.var_hi[k])
    active = []
    for r, (row, lo, hi) in enumerate(zip(st_rows, st_lo, st_hi)):
        v = row @ z
        if np.isfinite(hi) and hi - v <= 1e-8 * (1 + abs(hi)):
            cols.append(row)
            active.append((r, 1))
            lower.append(0.0)
            upper.append(np.inf)
        elif np.isfinite(lo) and v - lo <= 1e-8 * (1 + abs(lo)):
            cols.append(-row)
            active.append((r, -1))
            lower.append(0.0)
            upper.append(np.inf)
    A = np.array(cols).T if cols else np.zeros((n, 0))
    b = -base
    weight = 1e3 * scale
    simplex = np.zeros((asm.S, A.shape[1]))
    for i, sl in enumerate(gamma_slices):
        simplex[i, sl] = weight
    A_full = np.vstack([A, simplex])
    b_full = np.concatenate([b, np.full(asm.S, weight)])
    if A_full.shape[1] == 0:
        res_x = np.zeros(0)
    else:
        res = lsq_linear(A_full, b_full, bounds=(np.array(lower), np.array(upper)),
                         method="bvls", tol=1e-14, max_iter=2000)
        res_x = res.x
    stat = A @ res_x - b
    residual = float(np.max(np.abs(stat), initial=0.0))
    gammas = []
    for i, sl in enumerate(gamma_slices):
        gm = res_x[sl]
        residual = max(residual, abs(float(gm.sum()) - 1.0) * scale)
        gammas.append(gm)
    y = res_x[n_gamma:n_gamma + asm.Aeq.shape[0]]
    z_signed = np.zeros(len(st_rows))
    off = n_gamma + asm.Aeq.shape[0]
    for k, (r, side) in enumerate(active):
        z_signed[r] = side * res_x[off + k]
    return Certificate(gammas=gammas, operators=ops, patterns=pattern_sets, active=active,
                       y=y, z_signed=z_signed, residual=residual / scale, complete=complete)


# --------------------------------------------------------------------------
# piecewise minimization


@dataclass
class PiecewiseResult:
    z: np.ndarray
    objective: float
    y: np.ndarray
    z_signed: np.ndarray
    patterns: list
    gammas: list
    operators: list
    iterations: int
    converged: bool
    method: str
    residual: float
    qp_solution: qpsolve.QpSolution | None = None


def _signed_from_qp(asm, sol):
    st = qpsolve._Stacked(asm.qp([np.zeros((asm.T, asm.T))] * asm.S))
    lin = sol.duals_in_upper - sol.duals_in_lower
    box = sol.duals_box_upper - sol.duals_box_lower
    return np.concatenate([lin, box[st.box_vars]])


def _stacked_rows(asm):
    st = qpsolve._Stacked(asm.qp([np.zeros((asm.T, asm.T))] * asm.S))
    return st.C, st.lo, st.hi


def _descent_direction(asm: _Assembly, z, cert: Certificate) -> np.ndarray:
    """Steepest feasible descent direction over the pieces meeting at ``z``.

    Solves ``min sum_i tau_i + c'd + |d|^2 / 2`` with ``g_ik'd <= tau_i`` for
    every adjacent piece gradient, ``Aeq d = 0`` and the active rows kept
    feasible. ``d = 0`` means ``z`` is stationary over the enumerated pieces.
    """
    g, u = asm.split(z)
    n, S = asm.n, asm.S
    base = np.zeros(n)
    for j in range(asm.J):
        base[asm.gblock(j)] = asm.gen_weights[j] * g[j] + asm.gen_linear[j]
    C, _, _ = _stacked_rows(asm)
    rows, hi = [], []
    for i, pats in enumerate(cert.patterns):
        for P in pats:
            row = np.zeros(n + S)
            row[asm.ublock(i)] = asm.storage_matrix(i, P) @ u[i]
            row[n + i] = -1.0
            rows.append(row)
            hi.append(0.0)
    for r, side in cert.active:
        row = np.zeros(n + S)
        row[:n] = side * C[r]
        rows.append(row)
        hi.append(0.0)
    Q = np.zeros((n + S, n + S))
    Q[:n, :n] = np.eye(n)
    q = np.concatenate([base, np.ones(S)])
    Aeq = np.hstack([asm.Aeq, np.zeros((asm.Aeq.shape[0], S))])
    Ain = np.array(rows) if rows else np.zeros((0, n + S))
    prob = qpsolve.QuadraticProgram(Q=Q, q=q, Aeq=Aeq, beq=np.zeros(Aeq.shape[0]), Ain=Ain,
                                    lin_upper=np.array(hi))
    return qpsolve.solve(prob).x[:n]


def _line_search(asm: _Assembly, z, d, f0):
    C, lo, hi = _stacked_rows(asm)
    cz, cd = C @ z, C @ d
    t_max = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(cd > 1e-12, (hi - cz) / cd, np.inf)
        dn = np.where(cd < -1e-12, (lo - cz) / cd, np.inf)
    t_max = float(min(np.min(up, initial=np.inf), np.min(dn, initial=np.inf)))
    t_max = max(t_max, 0.0)
    phi = lambda t: asm.true_objective(z + t * d)  # noqa: E731
    # bracket: expand until the objective rises or a constraint blocks
    hi_t = min(1.0, t_max)
    while hi_t < t_max and phi(hi_t) < f0:
        hi_t = min(2.0 * hi_t, t_max)
        if hi_t > 1e12:
            break
    res = minimize_scalar(phi, bounds=(0.0, hi_t), method="bounded",
                          options={"xatol": 1e-12 * max(hi_t, 1e-300)})
    t = float(res.x)
    cand = [(phi(t), t), (phi(hi_t), hi_t)]
    f_best, t_best = min(cand)
    return z + t_best * d, f_best


def _initial_point(asm: _Assembly, u_init):
    zero = [np.zeros((asm.T, asm.T))] * asm.S
    if u_init is not None:
        u_init = np.asarray(u_init, dtype=np.float64).reshape(asm.S, asm.T)
        v = np.zeros(asm.n)
        for i in range(asm.S):
            v[asm.ublock(i)] = u_init[i]
        z, _ = _project(asm, v, None)
        return z
    # idle storage when that is feasible, otherwise any feasible point
    qp = asm.qp(zero)
    lo, hi = qp.var_lower.copy(), qp.var_upper.copy()
    for i in range(asm.S):
        lo[asm.ublock(i)] = 0.0
        hi[asm.ublock(i)] = 0.0
    try:
        idle = qpsolve.QuadraticProgram(Q=qp.Q, q=qp.q, Aeq=qp.Aeq, beq=qp.beq, Ain=qp.Ain,
                                        lin_lower=qp.lin_lower, lin_upper=qp.lin_upper,
                                        var_lower=lo, var_upper=hi)
        return qpsolve.solve(idle).x
    except qpsolve.QpInfeasibleError:
        return qpsolve.solve(qp).x


MAX_BUNDLE = 60


def _add_pattern(pats, P) -> bool:
    if any(np.array_equal(P, Q) for Q in pats):
        return False
    pats.append(P)
    return True


def _probe(asm: _Assembly, z, d):
    """Patterns of the pieces entered from ``z`` along ``d`` whose regions contain ``z``."""
    _, u = asm.split(z)
    _, du = asm.split(d)
    umax = max(1.0, float(np.max(np.abs(u), initial=0.0)))
    dn = float(np.max(np.abs(du), initial=0.0))
    if dn == 0.0:
        return asm.patterns_at(z)
    for rel in (1e-7, 1e-9, 1e-5):
        t = rel * umax / dn
        out = []
        for i, sp in enumerate(asm.inst.storages):
            P, R = rainflow.piece_region(u[i] + t * du[i], sp.x0, sp.E)
            if R.size and np.max(R @ u[i]) > 1e-9 * sp.E * umax:
                break
            out.append(P)
        else:
            return out
    return None


def _bundle_step(asm: _Assembly, z, f, scale, pattern_sets):
    """From a piece minimum ``z``, either certify stationarity or take one
    descent step. Returns ``(z_new, f_new, cert)``; ``z_new`` is None when
    certified or stalled."""
    g, u = asm.split(z)
    base = np.zeros(asm.n)
    for j in range(asm.J):
        base[asm.gblock(j)] = asm.gen_weights[j] * g[j] + asm.gen_linear[j]
    cert = None
    for _ in range(MAX_BUNDLE):
        cert = certify(asm, z, pattern_sets)
        if cert.residual <= CERT_TOL:
            return None, None, cert
        d = _descent_direction(asm, z, cert)
        if np.max(np.abs(d), initial=0.0) <= 1e-14 * scale:
            return None, None, cert
        _, du = asm.split(d)
        predicted = float(base @ d) + sum(
            max(float((asm.storage_matrix(i, P) @ u[i]) @ du[i]) for P in pats)
            for i, pats in enumerate(pattern_sets))
        probe = _probe(asm, z, d)
        if probe is None:
            return None, None, cert
        slope = float(base @ d) + sum(float((asm.storage_matrix(i, P) @ u[i]) @ du[i])
                                      for i, P in enumerate(probe))
        if slope <= 0.5 * predicted:
            z_new, f_new = _line_search(asm, z, d, f)
            if f_new < f - 1e-15 * scale:
                return z_new, f_new, cert
        grew = False
        for i, P in enumerate(probe):
            grew |= _add_pattern(pattern_sets[i], P)
        if not grew:
            return None, None, cert
    return None, None, cert


def minimize_piecewise(asm: _Assembly, u_init=None, max_outer: int = MAX_OUTER) -> PiecewiseResult:
    """Minimize the assembled objective with piecewise-quadratic storage cost.

    Each round solves the QP of the quadratic piece containing the current
    point, restricted to that piece's region, so the true objective never
    increases. At a kink the gradients of the pieces meeting there are
    collected as needed (a local bundle); they give a steepest-descent
    direction, and an exact line search moves into the next piece. Stops
    when convex weights ``gamma`` over the collected ``N_k`` certify
    stationarity (``gamma = [1]`` at smooth points).
    """
    if asm.S == 0 or not np.any(asm.sto_weights > 0):
        zero = [np.zeros((asm.T, asm.T))] * asm.S
        sol = qpsolve.solve(asm.qp(zero))
        return _finalize(asm, sol.x, sol, zero, 1, "qp")
    z = _initial_point(asm, u_init)
    f = asm.true_objective(z)
    scale = max(1.0, abs(f))
    start = None
    steps = 0
    cert = None
    it = 0
    for it in range(1, max_outer + 1):
        patterns, region = asm.pieces_at(z)
        try:
            sol = qpsolve.solve(asm.qp(patterns, region), _start=(z, start[1]) if start else None)
            f_new = asm.true_objective(sol.x)
            if f_new <= f + 1e-12 * scale:
                z, f = sol.x, f_new
                start = (sol.x, sol.working_set)
                patterns = asm.pieces_at(z)[0] if f_new < f else patterns
        except qpsolve.QpError:
            start = None
        _, u = asm.split(z)
        sets = []
        for i, sp in enumerate(asm.inst.storages):
            pats, _ = rainflow.adjacent_patterns(u[i], sp.E, sp.x0)
            _add_pattern(pats, patterns[i])
            sets.append(pats)
        z_new, f_new, cert = _bundle_step(asm, z, f, scale, sets)
        if cert.residual <= CERT_TOL:
            return _finalize(asm, z, None, asm.patterns_at(z), it,
                             "piece-descent" if steps else "piece-qp", cert)
        if z_new is None:
            break
        z, f = z_new, f_new
        start = None
        steps += 1
    log.info("piece descent stalled after %d rounds; running subgradient", it)
    best = _finalize(asm, z, None, asm.patterns_at(z), it, "piece-descent", cert)
    sub = _subgradient(asm, z, it)
    return sub if sub.objective < best.objective else best


def _finalize(asm, z, sol, patterns, iterations, method, cert=None) -> PiecewiseResult:
    cert = certify(asm, z) if cert is None else cert
    if sol is not None and all(len(g) == 1 for g in cert.gammas):
        y = sol.duals_eq[:asm.Aeq.shape[0]]
        z_signed = _signed_from_qp(asm, sol)
    else:
        y, z_signed = cert.y, cert.z_signed
    return PiecewiseResult(
        z=z, objective=asm.true_objective(z), y=y, z_signed=z_signed,
        patterns=patterns, gammas=cert.gammas, operators=cert.operators,
        iterations=iterations, converged=cert.residual <= CERT_TOL,
        method=method, residual=cert.residual, qp_solution=sol,
    )


def _project(asm, v, start):
    qp = qpsolve.QuadraticProgram(
        Q=np.eye(asm.n), q=-v, Aeq=asm.Aeq, beq=asm.beq, Ain=asm.Ain,
        lin_lower=asm.lin_lo, lin_upper=asm.lin_hi,
        var_lower=asm.var_lo, var_upper=asm.var_hi)
    sol = qpsolve.solve(qp, _start=start)
    return sol.x, (sol.x, sol.working_set)


def _subgradient(asm: _Assembly, z, iterations) -> PiecewiseResult:
    w_sto = max((w / sp.E ** 2 for w, sp in zip(asm.sto_weights, asm.inst.storages)), default=0.0)
    eta0 = 1.0 / (w_sto + float(np.max(asm.gen_weights, initial=0.0)))
    z, start = _project(asm, z, None)
    best_z, best_f = z.copy(), asm.true_objective(z)
    nus = []
    for k in range(1, SUBGRADIENT_ITERS + 1):
        z, start = _project(asm, z - eta0 / math.sqrt(k) * asm.subgradient(z), start)
        f = asm.true_objective(z)
        if f < best_f:
            best_z, best_f = z.copy(), f
        _, u = asm.split(z)
        nus.append(np.concatenate([rainflow.depth_pattern(u[i], sp.x0, sp.E) @ u[i] / sp.E
                                   for i, sp in enumerate(asm.inst.storages)]))
        if k > 50 and np.max(np.abs(nus[-1] - nus[-51])) <= 1e-7:
            break
        if len(nus) > 60:
            nus.pop(0)
    result = _finalize(asm, best_z, None, asm.patterns_at(best_z), iterations + k, "subgradient")
    return result


# --------------------------------------------------------------------------
# the four dispatch problems


def _solution_from(asm: _Assembly, res: PiecewiseResult, mechanism: str, objective: float,
                   theta_weights=None) -> DispatchSolution:
    inst = asm.inst
    g, u = asm.split(res.z)
    nu = np.zeros((asm.S, asm.T))
    x = np.zeros((asm.S, asm.T + 1))
    for i, sp in enumerate(inst.storages):
        x[i] = rainflow.soc_profile(u[i], sp.x0, sp.E)
        nu[i] = rainflow.depth_pattern(u[i], sp.x0, sp.E) @ u[i] / sp.E
    lam = -res.y[:asm.T]
    mult = _multipliers(asm, res)
    theta = None
    if theta_weights is not None:
        theta = nu * np.asarray(theta_weights, dtype=np.float64)[:, None]
    return DispatchSolution(
        mechanism=mechanism, g=g, u=u, nu=nu, x=x, lam=lam, objective=objective,
        theta=theta, multipliers=mult, iterations=res.iterations, converged=res.converged,
        method=res.method, gammas=res.gammas, operators=res.operators, residual=res.residual,
    )


def _multipliers(asm: _Assembly, res: PiecewiseResult) -> dict:
    T, J, S = asm.T, asm.J, asm.S
    out = {"balance": -res.y[:T]}
    if asm.physical:
        out["periodicity"] = res.y[T:T + S].copy()
    zs = res.z_signed
    n_lin = asm.Ain.shape[0]
    lin = zs[:n_lin]
    out["soc_range_upper"] = np.array([np.maximum(lin[i * T:(i + 1) * T], 0.0) for i in range(S)]).reshape(S, T) if asm.physical else np.zeros((S, T))
    out["soc_range_lower"] = np.array([np.maximum(-lin[i * T:(i + 1) * T], 0.0) for i in range(S)]).reshape(S, T) if asm.physical else np.zeros((S, T))
    box = np.zeros(asm.n)
    finite = np.flatnonzero(np.isfinite(asm.var_lo) | np.isfinite(asm.var_hi))
    box[finite] = zs[n_lin:n_lin + finite.size]
    out["gen_upper"] = np.array([np.maximum(box[asm.gblock(j)], 0.0) for j in range(J)]).reshape(J, T)
    out["gen_lower"] = np.array([np.maximum(-box[asm.gblock(j)], 0.0) for j in range(J)]).reshape(J, T)
    out["rate_upper"] = np.array([np.maximum(box[asm.ublock(i)], 0.0) for i in range(S)]).reshape(S, T)
    out["rate_lower"] = np.array([np.maximum(-box[asm.ublock(i)], 0.0) for i in range(S)]).reshape(S, T)
    return out


def social_planner(inst: Instance, u_init=None) -> DispatchSolution:
    """Minimize true generation plus degradation cost under all physical constraints."""
    asm = _Assembly(inst, [gp.c for gp in inst.generators], [gp.a for gp in inst.generators],
                    [sp.b for sp in inst.storages])
    res = minimize_piecewise(asm, u_init)
    return _solution_from(asm, res, "social", res.objective)


def cycle_aware_clearing(inst: Instance, alphas, betas, u_init=None,
                         intercepts=None) -> DispatchSolution:
    """Clear energy-cycling bids ``nu = beta * theta`` with supply bids ``g = alpha * Theta``.

    ``intercepts`` optionally shifts generator bids to ``g = alpha * (Theta - a)``,
    i.e. a linear cost term; by default generators are pure quadratic.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if np.any(alphas <= 0) or np.any(betas <= 0):
        raise ValueError("cycle-aware clearing needs strictly positive bids")
    lin = np.zeros(len(inst.generators)) if intercepts is None else np.asarray(intercepts, float)
    asm = _Assembly(inst, 1.0 / alphas, lin, 1.0 / betas)
    res = minimize_piecewise(asm, u_init)
    sol = _solution_from(asm, res, "cbm", res.objective, theta_weights=1.0 / betas)
    # generator stationarity: lam = g / alpha + a + eta_up - eta_lo
    rec = np.array([sol.g[j] / alphas[j] + lin[j] + sol.multipliers["gen_upper"][j]
                    - sol.multipliers["gen_lower"][j] for j in range(len(alphas))])
    sol.multipliers["lambda_by_generator"] = rec
    return sol


def gcd_clearing(inst: Instance, physical: bool = True) -> DispatchSolution:
    """Generation-centric dispatch; degradation is charged afterwards as hidden cost.

    ``physical=False`` keeps power balance as the only constraint, as in
    :func:`simplified_planner`.
    """
    asm = _Assembly(inst, [gp.c for gp in inst.generators], [gp.a for gp in inst.generators],
                    np.zeros(len(inst.storages)), physical=physical)
    if not physical:
        asm.var_lo[:asm.J * asm.T] = -np.inf
        asm.var_hi[:asm.J * asm.T] = np.inf
    res = minimize_piecewise(asm)
    sol = _solution_from(asm, res, "gcd", res.objective)
    sol.hidden_cost = sum(degradation_cost(sol.u[i], sp, check_bounds=False)
                          for i, sp in enumerate(inst.storages))
    return sol


def prosumer_clearing(inst: Instance, alphas, beta_hats, physical: bool = False,
                      intercepts=None) -> DispatchSolution:
    """Clear linear supply-function bids ``g = alpha * lam``, ``u = beta_hat * lam``.

    With ``physical=False`` only power balance binds and the clearing has
    the closed form ``lam = d / (sum alpha + sum beta_hat)``; a QP solve
    cross-checks it. ``physical=True`` adds periodicity, SoC range and rate
    limits (an extension used for the scenario comparisons).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    beta_hats = np.asarray(beta_hats, dtype=np.float64)
    if np.any(alphas < 0) or np.any(beta_hats < 0):
        raise ValueError("bids must be nonnegative")
    total = alphas.sum() + beta_hats.sum()
    if not total > 0:
        raise DegenerateClearingError("all bids are zero; the market cannot clear")
    lin = np.zeros(len(alphas)) if intercepts is None else np.asarray(intercepts, float)
    d = inst.demand
    if not physical:
        lam = (d + float(alphas @ lin)) / total
        g = np.array([alphas[j] * (lam - lin[j]) for j in range(len(alphas))]).reshape(len(alphas), inst.T)
        u = np.array([b * lam for b in beta_hats]).reshape(len(beta_hats), inst.T)
        _cross_check_closed_form(inst, alphas, beta_hats, lin, g, u)
        nu = np.zeros_like(u)
        x = np.zeros((len(beta_hats), inst.T + 1))
        for i, sp in enumerate(inst.storages):
            x[i] = rainflow.soc_profile(u[i], sp.x0, sp.E)
            nu[i] = rainflow.depth_pattern(u[i], sp.x0, sp.E) @ u[i] / sp.E
        obj = sum(0.5 / a * float(gj @ gj) + l * float(gj.sum()) for a, l, gj in zip(alphas, lin, g) if a > 0)
        obj += sum(0.5 / b * float(ui @ ui) for b, ui in zip(beta_hats, u) if b > 0)
        J, S = len(alphas), len(beta_hats)
        zeros = lambda k: np.zeros((k, inst.T))  # noqa: E731
        mult = {"balance": lam, "gen_upper": zeros(J), "gen_lower": zeros(J),
                "rate_upper": zeros(S), "rate_lower": zeros(S),
                "soc_range_upper": zeros(S), "soc_range_lower": zeros(S)}
        return DispatchSolution(mechanism="pbm", g=g, u=u, nu=nu, x=x, lam=lam, objective=obj,
                                multipliers=mult, method="closed-form")
    w_g = np.where(alphas > 0, 1.0 / np.where(alphas > 0, alphas, 1.0), 0.0)
    w_s = np.where(beta_hats > 0, 1.0 / np.where(beta_hats > 0, beta_hats, 1.0), 0.0)
    asm = _Assembly(inst, w_g, lin, np.zeros(len(beta_hats)), physical=True)
    # zero bids pin the participant at zero output
    for j in np.flatnonzero(alphas == 0):
        asm.var_lo[asm.gblock(j)] = 0.0
        asm.var_hi[asm.gblock(j)] = 0.0
    for i in np.flatnonzero(beta_hats == 0):
        asm.var_lo[asm.ublock(i)] = 0.0
        asm.var_hi[asm.ublock(i)] = 0.0
    qp = asm.qp([np.zeros((inst.T, inst.T))] * asm.S)
    for i in range(asm.S):
        b = asm.ublock(i)
        qp.Q[b, b] = w_s[i] * np.eye(inst.T)
    sol = qpsolve.solve(qp)
    res = PiecewiseResult(z=sol.x, objective=sol.objective, y=sol.duals_eq,
                          z_signed=_signed_from_qp(asm, sol), patterns=[], gammas=[],
                          operators=[], iterations=1, converged=True, method="qp",
                          residual=0.0, qp_solution=sol)
    return _solution_from(asm, res, "pbm", sol.objective)


def _cross_check_closed_form(inst, alphas, beta_hats, lin, g, u):
    T = inst.T
    active_g = np.flatnonzero(alphas > 0)
    active_s = np.flatnonzero(beta_hats > 0)
    n = (active_g.size + active_s.size) * T
    Q = np.zeros((n, n))
    q = np.zeros(n)
    for k, j in enumerate(active_g):
        Q[k * T:(k + 1) * T, k * T:(k + 1) * T] = np.eye(T) / alphas[j]
        q[k * T:(k + 1) * T] = lin[j]
    off = active_g.size
    for k, i in enumerate(active_s):
        b = slice((off + k) * T, (off + k + 1) * T)
        Q[b, b] = np.eye(T) / beta_hats[i]
    A = np.hstack([np.eye(T)] * (active_g.size + active_s.size))
    sol = qpsolve.solve(qpsolve.QuadraticProgram(Q=Q, q=q, Aeq=A, beq=inst.demand))
    z = np.concatenate([g[j] for j in active_g] + [u[i] for i in active_s])
    if np.max(np.abs(sol.x - z)) > 1e-6 * (1.0 + np.max(np.abs(z))):
        raise DispatchError("closed-form prosumer clearing disagrees with the QP solve")


def evaluate_true_cost(inst: Instance, g, u, check_bounds: bool = False) -> tuple[float, float]:
    """``(generation cost, degradation cost)`` of a schedule at true parameters."""
    gen = sum(generation_cost(g[j], gp) for j, gp in enumerate(inst.generators))
    deg = sum(degradation_cost(u[i], sp, check_bounds=check_bounds) for i, sp in enumerate(inst.storages))
    return gen, deg


def simplified_planner(inst: Instance, u_init=None) -> DispatchSolution:
    """Social planner with power balance as the only constraint."""
    asm = _Assembly(inst, [gp.c for gp in inst.generators], [gp.a for gp in inst.generators],
                    [sp.b for sp in inst.storages], physical=False)
    for j in range(asm.J):
        asm.var_lo[asm.gblock(j)] = -np.inf
        asm.var_hi[asm.gblock(j)] = np.inf
    res = minimize_piecewise(asm, u_init)
    return _solution_from(asm, res, "social-simplified", res.objective)


# --------------------------------------------------------------------------
# brute-force oracle


MAX_GRID_POINTS = 10 ** 8


def brute_force_oracle(inst: Instance, grid_step: float) -> tuple[float, np.ndarray]:
    """Exhaustive grid search for one generator and one storage, ``T <= 4``.

    Periodicity fixes the last rate; the generator output follows from
    power balance. Returns ``(best objective, best rate vector)``.
    """
    if len(inst.generators) != 1 or len(inst.storages) != 1:
        raise ValueError("brute-force oracle supports one generator and one storage")
    if inst.T > 4:
        raise ValueError("brute-force oracle supports T <= 4")
    gp, sp = inst.generators[0], inst.storages[0]
    if not (np.isfinite(sp.u_min) and np.isfinite(sp.u_max)):
        raise ValueError("brute-force oracle needs finite rate bounds")
    n = int(math.floor((sp.u_max - sp.u_min) / grid_step + 1e-9)) + 1
    points = n ** (inst.T - 1)
    if points > MAX_GRID_POINTS:
        raise ValueError(f"grid has {points} points, more than {MAX_GRID_POINTS}")
    best, u, _ = _kernels.grid_search(inst.demand, gp.c, gp.a, gp.g_min, gp.g_max, sp.E, sp.b,
                                      sp.x0, sp.u_min, sp.u_max, grid_step, rainflow.TIE_TOL)
    return float(best), np.asarray(u)
