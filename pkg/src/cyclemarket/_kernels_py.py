"""Pure-Python Rainflow kernels.

Reference implementation of the compiled ``_kernels_ext`` module. Both
expose the same functions with the same semantics; ``cyclemarket._kernels``
picks one at import time.
"""
from __future__ import annotations

import math

import numpy as np


def switching_points(x, tol):
    """Indices where the SoC profile reverses direction (endpoints included).

    Runs of values within ``tol`` of the last kept point are merged into
    that point, so a plateau is represented by its first node.
    """
    idx = [0]
    for t in range(1, len(x)):
        xt = x[t]
        last = x[idx[-1]]
        if abs(xt - last) <= tol:
            continue
        if len(idx) >= 2 and (xt - last) * (last - x[idx[-2]]) > 0.0:
            idx[-1] = t
        else:
            idx.append(t)
    return idx


def rainflow_edges(x, tol):
    """Run the four-point Rainflow pass over ``x``.

    Returns ``(n_full, edges)`` where ``edges`` is an ``(k, 2)`` int64 array
    of time-ordered node pairs: the ``n_full`` extracted full cycles first
    (one row per cycle, in extraction order), then the residual
    half-cycles left to right.
    """
    x = np.asarray(x, dtype=np.float64)
    pts = switching_points(x, tol)
    full = []
    i = 0
    while i + 3 < len(pts):
        d1 = abs(x[pts[i]] - x[pts[i + 1]])
        d2 = abs(x[pts[i + 1]] - x[pts[i + 2]])
        d3 = abs(x[pts[i + 2]] - x[pts[i + 3]])
        if d2 <= d1 + tol and d2 <= d3 + tol:
            full.append((pts[i + 1], pts[i + 2]))
            del pts[i + 1:i + 3]
            i = max(0, i - 2)
        else:
            i += 1
    rows = full + [(pts[k], pts[k + 1]) for k in range(len(pts) - 1)]
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return len(full), edges


def _cycle_cost(x, tol):
    # sum of squared half-cycle depths; full cycles count twice
    n_full, edges = rainflow_edges(x, tol)
    total = 0.0
    for k in range(edges.shape[0]):
        dep = x[edges[k, 0]] - x[edges[k, 1]]
        total += dep * dep * (2.0 if k < n_full else 1.0)
    return total


def grid_search(d, c, a, g_min, g_max, E, b, x0, u_min, u_max, step, tol):
    """Exhaustive search over periodic rate vectors on a regular grid.

    One generator and one storage unit; the generator output follows from
    power balance. Returns ``(best_objective, best_u, n_points)`` with
    ``best_objective = inf`` when no grid point is feasible.
    """
    d = np.asarray(d, dtype=np.float64)
    T = d.shape[0]
    n = int(math.floor((u_max - u_min) / step + 1e-9)) + 1
    levels = [u_min + k * step for k in range(n)]
    free = T - 1
    best = math.inf
    best_u = np.zeros(T)
    count = 0
    eps = 1e-12
    counter = [0] * free
    x = np.empty(T + 1)
    u = np.empty(T)
    while True:
        s = 0.0
        for k in range(free):
            u[k] = levels[counter[k]]
            s += u[k]
        u[T - 1] = -s
        count += 1
        ok = u_min - eps <= u[T - 1] <= u_max + eps
        if ok:
            x[0] = x0
            for t in range(T):
                x[t + 1] = x[t] - u[t] / E
                if x[t + 1] < -eps or x[t + 1] > 1.0 + eps:
                    ok = False
                    break
        if ok:
            gen = 0.0
            for t in range(T):
                g = d[t] - u[t]
                if g < g_min - eps or g > g_max + eps:
                    ok = False
                    break
                gen += 0.5 * c * g * g + a * g
        if ok:
            val = gen + 0.5 * b * _cycle_cost(x, tol)
            if val < best:
                best = val
                best_u[:] = u
        # odometer increment
        k = 0
        while k < free:
            counter[k] += 1
            if counter[k] < n:
                break
            counter[k] = 0
            k += 1
        if k == free:
            break
    return best, best_u, count
