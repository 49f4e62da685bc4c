"""Dense convex QP solver with KKT multipliers.

Problem::

    minimize    0.5 x'Qx + q'x + constant
    subject to  Aeq x = beq
                lin_lower <= Ain x <= lin_upper
                var_lower <= x <= var_upper

Sign convention. With the Lagrangian

    L = 0.5 x'Qx + q'x + y'(Aeq x - beq)
        + zu'(Ain x - lin_upper) + zl'(lin_lower - Ain x)
        + wu'(x - var_upper) + wl'(var_lower - x)

stationarity reads ``Qx + q + Aeq'y + Ain'(zu - zl) + (wu - wl) = 0`` with
``zu, zl, wu, wl >= 0``. Hence ``d(objective)/d(beq) = -y``.

The primary method is a primal active-set iteration started from a
feasible vertex (found with HiGHS). If it fails to terminate, an ADMM
(operator splitting) pass with an active-set polish takes over.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max-iters"

PRIMAL_TOL = 1e-8
DUAL_TOL = 1e-6
PSD_TOL = 1e-10


class QpError(Exception):
    pass


class QpInfeasibleError(QpError):
    pass


class QpNotConvexError(QpError):
    pass


class QpUnboundedError(QpError):
    pass


def _vec(v, n, fill):
    if v is None:
        return np.full(n, fill, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"expected vector of length {n}, got {v.shape[0]}")
    return v


@dataclass
class QuadraticProgram:
    Q: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Ain: np.ndarray | None = None
    lin_lower: np.ndarray | None = None
    lin_upper: np.ndarray | None = None
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        n = self.q.shape[0]
        self.Q = np.asarray(self.Q, dtype=np.float64).reshape(n, n)
        self.Aeq = (np.zeros((0, n)) if self.Aeq is None
                    else np.asarray(self.Aeq, dtype=np.float64).reshape(-1, n))
        self.beq = _vec(self.beq, self.Aeq.shape[0], 0.0)
        self.Ain = (np.zeros((0, n)) if self.Ain is None
                    else np.asarray(self.Ain, dtype=np.float64).reshape(-1, n))
        mi = self.Ain.shape[0]
        self.lin_lower = _vec(self.lin_lower, mi, -np.inf)
        self.lin_upper = _vec(self.lin_upper, mi, np.inf)
        self.var_lower = _vec(self.var_lower, n, -np.inf)
        self.var_upper = _vec(self.var_upper, n, np.inf)
        for name in ("Q", "q", "Aeq", "beq", "Ain"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains NaN or infinite entries")
        for name in ("lin_lower", "lin_upper", "var_lower", "var_upper"):
            if np.any(np.isnan(getattr(self, name))):
                raise ValueError(f"{name} contains NaN")
        scale = max(1.0, float(np.max(np.abs(self.Q), initial=0.0)))
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("Q is not symmetric")
        self.Q = 0.5 * (self.Q + self.Q.T)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.constant)


@dataclass
class QpSolution:
    x: np.ndarray
    duals_eq: np.ndarray
    duals_in_lower: np.ndarray
    duals_in_upper: np.ndarray
    duals_box_lower: np.ndarray
    duals_box_upper: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    method: str = "active-set"
    working_set: list = field(default_factory=list, repr=False)


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


# --------------------------------------------------------------------------
# internal stacked form: rows of C are Ain followed by finite box rows


class _Stacked:
    def __init__(self, qp: QuadraticProgram):
        n = qp.n
        box = np.flatnonzero(np.isfinite(qp.var_lower) | np.isfinite(qp.var_upper))
        lin = np.flatnonzero(np.isfinite(qp.lin_lower) | np.isfinite(qp.lin_upper))
        eye = np.eye(n)
        self.lin_rows = lin
        self.box_vars = box
        self.C = np.vstack([qp.Ain[lin], eye[box]]) if (lin.size or box.size) else np.zeros((0, n))
        self.lo = np.concatenate([qp.lin_lower[lin], qp.var_lower[box]])
        self.hi = np.concatenate([qp.lin_upper[lin], qp.var_upper[box]])
        self.m = self.C.shape[0]

    def split(self, z_signed: np.ndarray, qp: QuadraticProgram):
        """Map signed row multipliers back to (in_lower, in_upper, box_lower, box_upper)."""
        nl = self.lin_rows.size
        zl = np.maximum(-z_signed, 0.0)
        zu = np.maximum(z_signed, 0.0)
        in_lo = np.zeros(qp.Ain.shape[0])
        in_hi = np.zeros(qp.Ain.shape[0])
        in_lo[self.lin_rows] = zl[:nl]
        in_hi[self.lin_rows] = zu[:nl]
        bx_lo = np.zeros(qp.n)
        bx_hi = np.zeros(qp.n)
        bx_lo[self.box_vars] = zl[nl:]
        bx_hi[self.box_vars] = zu[nl:]
        return in_lo, in_hi, bx_lo, bx_hi


def _inf(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _check_psd(Q: np.ndarray) -> None:
    if Q.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(Q))))
    w = np.linalg.eigvalsh(Q)
    if w[0] < -PSD_TOL * scale:
        raise QpNotConvexError(f"Q is not positive semidefinite (min eigenvalue {w[0]:.3e})")


def _null_space(A: np.ndarray, n: int, tol: float = 1e-11):
    if A.shape[0] == 0:
        return np.eye(n), 0
    u, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > tol * max(1.0, s[0]))) if s.size else 0
    return vt[rank:].T, rank


def _phase_one(qp: QuadraticProgram, st: _Stacked) -> np.ndarray:
    n = qp.n
    A_ub = []
    b_ub = []
    lin = st.lin_rows
    if lin.size:
        A = qp.Ain[lin]
        lo = qp.lin_lower[lin]
        hi = qp.lin_upper[lin]
        fin_hi = np.isfinite(hi)
        fin_lo = np.isfinite(lo)
        A_ub.append(A[fin_hi])
        b_ub.append(hi[fin_hi])
        A_ub.append(-A[fin_lo])
        b_ub.append(-lo[fin_lo])
    A_ub = np.vstack(A_ub) if A_ub else None
    b_ub = np.concatenate(b_ub) if b_ub else None
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(qp.var_lower, qp.var_upper)]
    res = linprog(np.zeros(n), A_ub=A_ub, b_ub=b_ub,
                  A_eq=qp.Aeq if qp.Aeq.shape[0] else None,
                  b_eq=qp.beq if qp.Aeq.shape[0] else None,
                  bounds=bounds, method="highs-ds")
    if res.status == 2:
        raise QpInfeasibleError("constraints are infeasible")
    if res.status != 0 or res.x is None:
        raise QpError(f"phase-one LP failed: {res.message}")
    return np.asarray(res.x, dtype=np.float64)


def _row_slack(st: _Stacked, x: np.ndarray):
    Cx = st.C @ x
    return Cx - st.lo, st.hi - Cx


def _active_set(qp: QuadraticProgram, st: _Stacked, x: np.ndarray, work: list,
                max_iter: int):
    """Primal active-set iterations from a feasible ``x``.

    ``work`` holds ``(row, side)`` pairs with side ``+1`` (upper) or ``-1``
    (lower). Returns ``(x, y, z_signed, work, iterations, converged)``.
    """
    n = qp.n
    Q, q = qp.Q, qp.q
    Aeq = qp.Aeq
    me = Aeq.shape[0]
    scale = max(1.0, float(np.max(np.abs(q), initial=0.0)), float(np.max(np.abs(Q), initial=0.0)))
    degenerate = 0
    for it in range(1, max_iter + 1):
        rows = [r for r, _ in work]
        AW = np.vstack([Aeq, st.C[rows]]) if rows else Aeq
        g = Q @ x + q
        Z, _ = _null_space(AW, n)
        p = np.zeros(n)
        unbounded_dir = False
        if Z.shape[1]:
            H = Z.T @ Q @ Z
            gr = Z.T @ g
            w, V = np.linalg.eigh(H)
            cut = 1e-11 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
            pos = w > cut
            coeff = V.T @ gr
            step_r = np.zeros_like(coeff)
            step_r[pos] = -coeff[pos] / w[pos]
            flat = coeff.copy()
            flat[pos] = 0.0
            if np.linalg.norm(flat) > 1e-10 * scale:
                # zero-curvature descent direction
                p = -Z @ (V @ flat)
                unbounded_dir = True
            else:
                p = Z @ (V @ step_r)
        if _inf(p) <= 1e-12 * (1.0 + _inf(x)):
            # multipliers: AW' mu = -g
            if AW.shape[0]:
                mu, *_ = np.linalg.lstsq(AW.T, -g, rcond=None)
            else:
                mu = np.zeros(0)
            y = mu[:me]
            signed = np.array([side * mu[me + k] for k, (_, side) in enumerate(work)])
            if signed.size == 0 or signed.min() >= -DUAL_TOL * 1e-3 * scale:
                z = np.zeros(st.m)
                for k, (r, side) in enumerate(work):
                    z[r] = mu[me + k]
                return x, y, z, work, it, True
            if degenerate > 5:
                drop = int(np.flatnonzero(signed < -DUAL_TOL * 1e-3 * scale)[0])
            else:
                drop = int(np.argmin(signed))
            work = work[:drop] + work[drop + 1:]
            continue
        # step to the nearest blocking constraint
        alpha = np.inf if unbounded_dir else 1.0
        block = None
        Cp = st.C @ p
        Cx = st.C @ x
        in_work = set(rows)
        for r in range(st.m):
            if r in in_work:
                continue
            a = Cp[r]
            if a > 1e-13 * (1.0 + abs(Cx[r])) and np.isfinite(st.hi[r]):
                ar = max(0.0, (st.hi[r] - Cx[r]) / a)
                if ar < alpha:
                    alpha, block = ar, (r, 1)
            elif a < -1e-13 * (1.0 + abs(Cx[r])) and np.isfinite(st.lo[r]):
                ar = max(0.0, (st.lo[r] - Cx[r]) / a)
                if ar < alpha:
                    alpha, block = ar, (r, -1)
        if not np.isfinite(alpha):
            raise QpUnboundedError("objective is unbounded below on the feasible set")
        degenerate = degenerate + 1 if alpha == 0.0 else 0
        x = x + alpha * p
        if block is not None:
            work = work + [block]
    return x, None, None, work, max_iter, False


def _initial_working_set(qp: QuadraticProgram, st: _Stacked, x: np.ndarray, hint=None):
    lo_slack, hi_slack = _row_slack(st, x)
    tol = 1e-9
    cand = []
    if hint:
        cand.extend(hint)
    for r in range(st.m):
        if hi_slack[r] <= tol * (1.0 + abs(st.hi[r])):
            cand.append((r, 1))
        elif lo_slack[r] <= tol * (1.0 + abs(st.lo[r])):
            cand.append((r, -1))
    work = []
    A = qp.Aeq
    _, rank = _null_space(A, qp.n)
    seen = set()
    for r, side in cand:
        if r in seen:
            continue
        bound = st.hi[r] if side > 0 else st.lo[r]
        if not np.isfinite(bound):
            continue
        if abs(st.C[r] @ x - bound) > 1e-7 * (1.0 + abs(bound)):
            continue
        trial = np.vstack([A, st.C[r]])
        _, rk = _null_space(trial, qp.n)
        if rk > rank:
            A, rank = trial, rk
            work.append((r, side))
            seen.add(r)
    return work


def _snap(qp: QuadraticProgram, st: _Stacked, x: np.ndarray, work: list) -> np.ndarray:
    """Least-norm correction making equalities and working rows exact."""
    rows = [r for r, _ in work]
    A = np.vstack([qp.Aeq, st.C[rows]]) if rows else qp.Aeq
    if A.shape[0] == 0:
        return x
    b = np.concatenate([qp.beq, [st.hi[r] if s > 0 else st.lo[r] for r, s in work]])
    resid = A @ x - b
    dx, *_ = np.linalg.lstsq(A, resid, rcond=None)
    return x - dx


def _polish(qp: QuadraticProgram, st: _Stacked, work: list, x_guess: np.ndarray):
    """Solve the equality-constrained KKT system for a given working set."""
    n = qp.n
    rows = [r for r, _ in work]
    A = np.vstack([qp.Aeq, st.C[rows]]) if rows else qp.Aeq
    b = np.concatenate([qp.beq, [st.hi[r] if s > 0 else st.lo[r] for r, s in work]])
    k = A.shape[0]
    K = np.block([[qp.Q, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-qp.q, b])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x = sol[:n]
    if _inf(K @ sol - rhs) > 1e-9 * (1.0 + _inf(rhs)):
        return None
    mu = sol[n:]
    me = qp.Aeq.shape[0]
    z = np.zeros(st.m)
    for i, (r, _) in enumerate(work):
        z[r] = mu[me + i]
    return x, mu[:me], z


def _admm(qp: QuadraticProgram, st: _Stacked, max_iter: int = 50000,
          rho: float = 0.1, sigma: float = 1e-6, relax: float = 1.6):
    """OSQP-style ADMM on ``l <= [Aeq; C] x <= u``."""
    n = qp.n
    A = np.vstack([qp.Aeq, st.C])
    lo = np.concatenate([qp.beq, st.lo])
    hi = np.concatenate([qp.beq, st.hi])
    m = A.shape[0]
    rho_vec = np.where(lo == hi, 1e3 * rho, rho)
    K = qp.Q + sigma * np.eye(n) + A.T @ (rho_vec[:, None] * A)
    fac = sla.cho_factor(K)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    for it in range(1, max_iter + 1):
        rhs = sigma * x - qp.q + A.T @ (rho_vec * z - y)
        x_t = sla.cho_solve(fac, rhs)
        z_t = A @ x_t
        x = relax * x_t + (1 - relax) * x
        z_rel = relax * z_t + (1 - relax) * z
        z_new = np.clip(z_rel + y / rho_vec, lo, hi)
        y = y + rho_vec * (z_rel - z_new)
        z = z_new
        if it % 25 == 0:
            r_prim = _inf(A @ x - z)
            r_dual = _inf(qp.Q @ x + qp.q + A.T @ y)
            if r_prim < 1e-10 * (1 + _inf(z)) and \
                    r_dual < 1e-10 * (1 + _inf(qp.q)):
                break
    return x, y[:qp.Aeq.shape[0]], y[qp.Aeq.shape[0]:], it


def solve(qp: QuadraticProgram, max_iter: int | None = None, _start=None) -> QpSolution:
    """Solve ``qp``; see the module docstring for the multiplier convention.

    Raises :class:`QpInfeasibleError`, :class:`QpNotConvexError` or
    :class:`QpUnboundedError`. A solve that runs out of iterations on both
    methods returns the best iterate with status ``max-iters``.
    """
    _check_psd(qp.Q)
    st = _Stacked(qp)
    n = qp.n
    if max_iter is None:
        max_iter = 20 * (n + st.m) + 100
    if (qp.Aeq.shape[0] and not st.m):
        # equality-only: one KKT solve unless Q is singular on the null space
        pol = _polish(qp, st, [], np.zeros(n))
        if pol is not None:
            x, y, z = pol
            if _inf(qp.Aeq @ x - qp.beq) > PRIMAL_TOL * (1 + _inf(qp.beq)):
                raise QpInfeasibleError("equality system is inconsistent")
            return _finish(qp, st, x, y, z, [], 1, "active-set")
    x = None
    hint = None
    if _start is not None:
        x0, hint = _start
        x0 = np.asarray(x0, dtype=np.float64)
        lo_s, hi_s = _row_slack(st, x0)
        if (np.min(lo_s, initial=0.0) >= -1e-9 and np.min(hi_s, initial=0.0) >= -1e-9
                and _inf(qp.Aeq @ x0 - qp.beq) <= 1e-9 * (1 + _inf(qp.beq))):
            x = x0
    if x is None:
        x = _phase_one(qp, st)
        hint = None
    work = _initial_working_set(qp, st, x, hint)
    x = _snap(qp, st, x, work)
    try:
        x, y, z, work, iters, ok = _active_set(qp, st, x, work, max_iter)
    except np.linalg.LinAlgError:
        ok, iters = False, 0
    if ok:
        pol = _polish(qp, st, work, x)
        if pol is not None:
            xp, yp, zp = pol
            if _feasible(qp, st, xp) and qp.objective(xp) <= qp.objective(x) + 1e-9 * (1 + abs(qp.objective(x))):
                x, y, z = xp, yp, zp
        return _finish(qp, st, x, y, z, work, iters, "active-set")
    log.info("active-set did not terminate after %d iterations; using ADMM", iters)
    xa, ya, za, it2 = _admm(qp, st)
    # guess the active set from the ADMM multipliers and polish
    work = [(r, 1 if za[r] > 0 else -1) for r in range(st.m)
            if abs(za[r]) > 1e-7 * (1 + np.max(np.abs(za), initial=0.0))]
    work = _initial_working_set(qp, st, xa, work) if work else work
    pol = _polish(qp, st, work, xa)
    if pol is not None and _feasible(qp, st, pol[0]):
        xp, yp, zp = pol
        sol = _finish(qp, st, xp, yp, zp, work, iters + it2, "admm+polish")
        if kkt_residuals(qp, sol).max() <= DUAL_TOL * (1 + np.max(np.abs(qp.q), initial=0.0)):
            return sol
    sol = _finish(qp, st, xa, ya, za, work, iters + it2, "admm")
    rep = kkt_residuals(qp, sol)
    if rep.max() > DUAL_TOL * (1 + np.max(np.abs(qp.q), initial=0.0)):
        sol.status = MAX_ITERS
    return sol


def _feasible(qp, st, x, tol=PRIMAL_TOL):
    lo_s, hi_s = _row_slack(st, x)
    scale = 1.0 + np.max(np.abs(x), initial=0.0)
    return (np.min(lo_s, initial=0.0) >= -tol * scale and np.min(hi_s, initial=0.0) >= -tol * scale
            and _inf(qp.Aeq @ x - qp.beq) <= tol * (1 + _inf(qp.beq)))


def _finish(qp, st, x, y, z, work, iters, method) -> QpSolution:
    in_lo, in_hi, bx_lo, bx_hi = st.split(z, qp)
    return QpSolution(
        x=x, duals_eq=y, duals_in_lower=in_lo, duals_in_upper=in_hi,
        duals_box_lower=bx_lo, duals_box_upper=bx_hi,
        objective=qp.objective(x), status=OPTIMAL, iterations=iters,
        method=method, working_set=list(work),
    )


def kkt_residuals(qp: QuadraticProgram, sol: QpSolution) -> KktReport:
    """Largest violation of each KKT condition at ``sol``."""
    x = sol.x
    grad = qp.Q @ x + qp.q + qp.Aeq.T @ sol.duals_eq \
        + qp.Ain.T @ (sol.duals_in_upper - sol.duals_in_lower) \
        + (sol.duals_box_upper - sol.duals_box_lower)
    stat = float(np.max(np.abs(grad), initial=0.0))
    Ax = qp.Ain @ x
    prim = [np.abs(qp.Aeq @ x - qp.beq),
            np.maximum(qp.lin_lower - Ax, 0.0), np.maximum(Ax - qp.lin_upper, 0.0),
            np.maximum(qp.var_lower - x, 0.0), np.maximum(x - qp.var_upper, 0.0)]
    prim = float(max((np.max(p, initial=0.0) for p in prim), default=0.0))
    mults = [sol.duals_in_lower, sol.duals_in_upper, sol.duals_box_lower, sol.duals_box_upper]
    dual = float(max(np.max(np.maximum(-m, 0.0), initial=0.0) for m in mults))
    # multipliers on infinite bounds must vanish
    for m, b in zip(mults, [qp.lin_lower, qp.lin_upper, qp.var_lower, qp.var_upper]):
        inf = ~np.isfinite(b)
        dual = max(dual, float(np.max(np.abs(m[inf]), initial=0.0)))
    comp = 0.0
    for m, slack in ((sol.duals_in_lower, Ax - qp.lin_lower), (sol.duals_in_upper, qp.lin_upper - Ax),
                     (sol.duals_box_lower, x - qp.var_lower), (sol.duals_box_upper, qp.var_upper - x)):
        fin = np.isfinite(slack)
        comp = max(comp, float(np.max(np.abs(m[fin] * slack[fin]), initial=0.0)))
    return KktReport(stationarity=stat, primal=prim, dual=dual, complementarity=comp)
