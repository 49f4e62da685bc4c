"""Rainflow cycle counting and its piecewise-linear matrix forms.

A normalized SoC profile ``x`` (length ``T + 1``) is decomposed into
half-cycles. Each half-cycle is an edge between two time nodes and its
depth is the SoC difference between them, so the depth vector is linear
in ``x`` once the edges are fixed: ``nu = M.T @ x``. Writing the same edge
as a contiguous sum of rates gives ``nu = N @ u`` with ``N = P / E`` for an
integer pattern ``P``.

Depth vector layout: extracted full cycles occupy the leading rows in
extraction order (two equal rows per cycle); residual half-cycles occupy
the trailing rows, left to right in time; rows in between are zero.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

TOL_SOC = 1e-9
TIE_TOL = 1e-9
MAX_OPERATORS = 16
PERTURBATION = 1e-6

FULL_CYCLE_HALF = "full-cycle-half"
RESIDUAL_HALF = "residual-half"


class InvalidHorizonError(ValueError):
    pass


class InfeasibleProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Pairing:
    source: int  # node with the higher SoC
    sink: int
    kind: str
    row: int


@dataclass
class RainflowDecomposition:
    depths: np.ndarray
    pairings: list[Pairing]
    incidence: np.ndarray

    @property
    def horizon(self) -> int:
        return self.depths.shape[0]


@dataclass
class RateToDepthOperator:
    matrices: list[np.ndarray]
    canonical_index: int = 0
    enumeration_complete: bool = True
    patterns: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def canonical(self) -> np.ndarray:
        return self.matrices[self.canonical_index]

    @property
    def m(self) -> int:
        return len(self.matrices)


def _as_profile(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise InvalidHorizonError("SoC profile needs at least two points (T >= 1)")
    if not np.all(np.isfinite(x)):
        raise ValueError("SoC profile contains non-finite values")
    return x


def check_profile(x, tol: float = TOL_SOC) -> np.ndarray:
    """Validate a normalized SoC profile and return it as a float array."""
    x = _as_profile(x)
    if x.min() < -tol or x.max() > 1.0 + tol:
        raise InfeasibleProfileError(
            f"SoC profile leaves [0, 1]: min={x.min():.6g}, max={x.max():.6g}"
        )
    return x


def _layout(x: np.ndarray, tie_tol: float) -> list[Pairing]:
    T = x.shape[0] - 1
    n_full, edges = _kernels.rainflow_edges(x, tie_tol)
    out = []
    for k in range(n_full):
        a, b = int(edges[k, 0]), int(edges[k, 1])
        hi, lo = (a, b) if x[a] >= x[b] else (b, a)
        out.append(Pairing(hi, lo, FULL_CYCLE_HALF, 2 * k))
        out.append(Pairing(hi, lo, FULL_CYCLE_HALF, 2 * k + 1))
    residual = edges[n_full:]
    first = T - residual.shape[0]
    for k, (a, b) in enumerate(residual):
        a, b = int(a), int(b)
        hi, lo = (a, b) if x[a] >= x[b] else (b, a)
        out.append(Pairing(hi, lo, RESIDUAL_HALF, first + k))
    return out


def _incidence(pairings: list[Pairing], T: int) -> np.ndarray:
    M = np.zeros((T + 1, T))
    for p in pairings:
        M[p.source, p.row] = 1.0
        M[p.sink, p.row] = -1.0
    return M


def count_cycles(x, tie_tol: float = TIE_TOL) -> RainflowDecomposition:
    """Rainflow decomposition of a normalized SoC profile.

    Switching points are found with flat runs merged, full cycles are
    extracted with the four-point rule (leftmost first, ``Δ2`` extracted on
    ties), and whatever remains is read off as residual half-cycles.

    >>> count_cycles([0.2, 0.5, 0.4, 0.8, 0.3]).depths
    array([0.1, 0.1, 0.6, 0.5])
    """
    x = check_profile(x)
    pairings = _layout(x, tie_tol)
    M = _incidence(pairings, x.shape[0] - 1)
    return RainflowDecomposition(depths=M.T @ x, pairings=pairings, incidence=M)


def incidence_matrix(x, tie_tol: float = TIE_TOL) -> np.ndarray:
    return count_cycles(x, tie_tol).incidence


def depth_pattern(u, x0: float = 0.5, E: float = 1.0,
                  tie_tol: float = TIE_TOL) -> np.ndarray:
    """Integer pattern ``P`` with ``N(u) = P / E`` for the canonical layout.

    Row ``r`` of ``P`` is ``±1`` over the slots spanned by the half-cycle in
    row ``r``, signed so that ``P @ u / E`` is its nonnegative depth. SoC
    bounds are not checked; only the shape of the induced profile matters.
    """
    u = np.asarray(u, dtype=np.float64)
    x = soc_profile(u, x0, E)
    return _pattern_from_profile(x, tie_tol)


def _pattern_from_profile(x: np.ndarray, tie_tol: float) -> np.ndarray:
    T = x.shape[0] - 1
    P = np.zeros((T, T))
    for p in _layout(x, tie_tol):
        a, b = sorted((p.source, p.sink))
        # x_a - x_b = sum(u[a:b]) / E
        P[p.row, a:b] = 1.0 if p.source == a else -1.0
    return P


def piece_region(u, x0: float = 0.5, E: float = 1.0,
                 tie_tol: float = TIE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """A quadratic piece of the cycle cost containing ``u``.

    Returns ``(P, R)``: on the polyhedral cone ``{v : R @ v <= 0}`` the
    Rainflow pattern of ``v`` is ``P`` (up to ties on its boundary), so the
    cost there is exactly ``||P v / E||^2``. ``u`` itself satisfies the
    rows to within ``tie_tol * E``. Every row records one decision taken
    by the Rainflow pass: the direction of a slot or the outcome of a
    four-point comparison. Near-idle slots inherit the preceding direction.
    """
    u = np.asarray(u, dtype=np.float64)
    T = u.shape[0]
    dx = -u / E
    dirs = np.zeros(T)
    last = 0.0
    for t in range(T):
        if abs(dx[t]) > tie_tol:
            last = 1.0 if dx[t] > 0 else -1.0
        dirs[t] = last
    nz = np.flatnonzero(dirs)
    first = dirs[nz[0]] if nz.size else 1.0
    dirs[:nz[0] if nz.size else T] = first
    rows = [dirs[t] * np.eye(T)[t] for t in range(T)]
    pts = [0] + [t for t in range(1, T) if dirs[t] != dirs[t - 1]] + [T]
    sd = [dirs[p] for p in pts[:-1]]

    def form(k):
        # E * depth of the segment pts[k] -> pts[k + 1]
        v = np.zeros(T)
        v[pts[k]:pts[k + 1]] = -sd[k]
        return v

    full = []
    i = 0
    while i + 3 < len(pts):
        f1, f2, f3 = form(i), form(i + 1), form(i + 2)
        d1, d2, d3 = f1 @ u / E, f2 @ u / E, f3 @ u / E
        if d2 <= d1 + tie_tol and d2 <= d3 + tie_tol:
            rows += [f2 - f1, f2 - f3]
            full.append((pts[i + 1], pts[i + 2], sd[i + 1]))
            del pts[i + 1:i + 3]
            del sd[i + 1:i + 3]
            i = max(0, i - 2)
        elif d2 <= d1 + tie_tol:
            rows += [f2 - f1, f3 - f2]
            i += 1
        else:
            rows.append(f1 - f2)
            i += 1
    P = np.zeros((T, T))
    for k, (a, b, sgn) in enumerate(full):
        P[2 * k, a:b] = -sgn
        P[2 * k + 1, a:b] = -sgn
    n_res = len(pts) - 1
    for k in range(n_res):
        P[T - n_res + k, pts[k]:pts[k + 1]] = -sd[k]
    return P, np.array(rows)


def soc_profile(u, x0: float, E: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return np.concatenate(([x0], x0 - np.cumsum(u) / E))


MAX_TIED_NODES = 6


def _tied_nodes(x: np.ndarray, tie_tol: float) -> list[int]:
    close = np.abs(x[:, None] - x[None, :]) <= tie_tol
    np.fill_diagonal(close, False)
    return [t for t in range(1, x.shape[0]) if close[t].any()]


def _enumerate_patterns(x: np.ndarray, u: np.ndarray, E: float, tie_tol: float,
                        eps: float, cap: int, combined: bool = False
                        ) -> tuple[list[np.ndarray], bool]:
    canonical = _pattern_from_profile(x, tie_tol)
    nu = canonical @ u / E
    scale = 1e-12 * max(1.0, float(np.max(np.abs(nu), initial=0.0)))
    ref = np.sort(nu)
    found = [canonical]
    tied = _tied_nodes(x, tie_tol) if combined else list(range(1, x.shape[0]))
    complete = True
    if combined and len(tied) <= MAX_TIED_NODES:
        moves = itertools.product((0.0, 1.0, -1.0), repeat=len(tied))
    else:
        complete = not combined
        moves = (tuple(sg if j == k else 0.0 for j in range(len(tied)))
                 for k in range(len(tied)) for sg in (1.0, -1.0))
    # distinct magnitudes so nudged nodes do not stay tied with each other
    mags = eps * (1.0 + np.arange(len(tied)) / (2.0 * max(len(tied), 1)))
    idx = np.array(tied, dtype=np.intp)
    for move in moves:
        if not any(move):
            continue
        xp = x.copy()
        xp[idx] += np.asarray(move) * mags
        P = _pattern_from_profile(xp, tie_tol)
        depths = P @ u / E
        # rows may be permuted between pieces; the cost only sees the multiset
        err = np.abs(np.sort(depths) - ref) if combined else np.abs(depths - nu)
        if np.max(err, initial=0.0) > scale:
            continue
        if any(np.array_equal(P, Q) for Q in found):
            continue
        if len(found) >= cap:
            return found, False
        found.append(P)
    return found, complete


def adjacent_patterns(u, E: float, x0: float, tie_tol: float = TIE_TOL,
                      cap: int = 64) -> tuple[list[np.ndarray], bool]:
    """Patterns of every quadratic piece of the cycle cost that meets at ``u``.

    Unlike :func:`rate_to_depth_operator`, tied nodes are nudged jointly and
    a piece is accepted when it reproduces the depths up to row order. The
    flag is false when the cap is hit or too many nodes are tied for the
    joint search, in which case only single nudges are tried.
    """
    u = np.asarray(u, dtype=np.float64)
    x = soc_profile(u, x0, E)
    eps = max(PERTURBATION, 1e3 * tie_tol)
    return _enumerate_patterns(x, u, E, tie_tol, eps, cap, combined=True)


def rate_to_depth_operator(u, E: float, x0: float, tie_tol: float = TIE_TOL,
                           check_bounds: bool = True,
                           cap: int = MAX_OPERATORS) -> RateToDepthOperator:
    """All rate-to-depth matrices ``N_k`` valid at ``u``.

    The canonical matrix comes first. When switching extrema are tied, each
    interior or terminal node is nudged by ``±ε`` in turn and every distinct
    matrix that still reproduces the depths at ``u`` row by row is kept.
    Only single nudges are tried and the list is capped at ``cap``
    entries; ``enumeration_complete`` is false when the cap is hit.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.shape[0] < 1:
        raise InvalidHorizonError("rate profile must have at least one slot")
    x = soc_profile(u, x0, E)
    if check_bounds:
        check_profile(x)
    eps = max(PERTURBATION, 1e3 * tie_tol)
    patterns, complete = _enumerate_patterns(x, u, E, tie_tol, eps, cap)
    return RateToDepthOperator(
        matrices=[P / E for P in patterns],
        canonical_index=0,
        enumeration_complete=complete,
        patterns=patterns,
    )


def depths_from_rates(u, E: float, x0: float, tie_tol: float = TIE_TOL,
                      check_bounds: bool = True) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    x = soc_profile(u, x0, E)
    if check_bounds:
        check_profile(x)
    return _pattern_from_profile(x, tie_tol) @ u / E
