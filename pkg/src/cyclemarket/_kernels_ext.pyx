# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Rainflow kernels; mirrors ``_kernels_py`` exactly."""
import numpy as np
from libc.math cimport fabs, floor, INFINITY



cdef Py_ssize_t _switching(const double[:] x, double tol, Py_ssize_t[:] idx) noexcept nogil:
    cdef Py_ssize_t n = 1, t
    cdef double xt, last
    idx[0] = 0
    for t in range(1, x.shape[0]):
        xt = x[t]
        last = x[idx[n - 1]]
        if fabs(xt - last) <= tol:
            continue
        if n >= 2 and (xt - last) * (last - x[idx[n - 2]]) > 0.0:
            idx[n - 1] = t
        else:
            idx[n] = t
            n += 1
    return n


cdef Py_ssize_t _extract(const double[:] x, double tol, Py_ssize_t[:] pts,
                         Py_ssize_t npts, Py_ssize_t[:, :] edges,
                         Py_ssize_t* n_full) noexcept nogil:
    cdef Py_ssize_t i = 0, k, nf = 0, ne
    cdef double d1, d2, d3
    while i + 3 < npts:
        d1 = fabs(x[pts[i]] - x[pts[i + 1]])
        d2 = fabs(x[pts[i + 1]] - x[pts[i + 2]])
        d3 = fabs(x[pts[i + 2]] - x[pts[i + 3]])
        if d2 <= d1 + tol and d2 <= d3 + tol:
            edges[nf, 0] = pts[i + 1]
            edges[nf, 1] = pts[i + 2]
            nf += 1
            for k in range(i + 1, npts - 2):
                pts[k] = pts[k + 2]
            npts -= 2
            i = i - 2 if i >= 2 else 0
        else:
            i += 1
    ne = nf
    for k in range(npts - 1):
        edges[ne, 0] = pts[k]
        edges[ne, 1] = pts[k + 1]
        ne += 1
    n_full[0] = nf
    return ne


def switching_points(x, double tol):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    idx = np.empty(xv.shape[0], dtype=np.intp)
    cdef Py_ssize_t n = _switching(xv, tol, idx)
    return [int(v) for v in idx[:n]]


def rainflow_edges(x, double tol):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t T1 = xv.shape[0]
    pts = np.empty(T1, dtype=np.intp)
    edges = np.empty((max(T1, 1), 2), dtype=np.intp)
    cdef Py_ssize_t npts = _switching(xv, tol, pts)
    cdef Py_ssize_t n_full = 0
    cdef Py_ssize_t ne = _extract(xv, tol, pts, npts, edges, &n_full)
    return int(n_full), edges[:ne].astype(np.int64)


cdef double _cycle_cost(const double[:] x, double tol, Py_ssize_t[:] pts,
                        Py_ssize_t[:, :] edges) noexcept nogil:
    cdef Py_ssize_t npts = _switching(x, tol, pts)
    cdef Py_ssize_t n_full = 0, k
    cdef Py_ssize_t ne = _extract(x, tol, pts, npts, edges, &n_full)
    cdef double total = 0.0, dep
    for k in range(ne):
        dep = x[edges[k, 0]] - x[edges[k, 1]]
        if k < n_full:
            total += 2.0 * dep * dep
        else:
            total += dep * dep
    return total


def grid_search(d, double c, double a, double g_min, double g_max, double E,
                double b, double x0, double u_min, double u_max, double step,
                double tol):
    cdef const double[:] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t T = dv.shape[0]
    cdef Py_ssize_t n = <Py_ssize_t>floor((u_max - u_min) / step + 1e-9) + 1
    cdef Py_ssize_t free = T - 1
    cdef double[:] levels = np.array([u_min + k * step for k in range(n)], dtype=np.float64)
    cdef Py_ssize_t[:] counter = np.zeros(max(free, 1), dtype=np.intp)
    cdef double[:] x = np.empty(T + 1)
    cdef double[:] u = np.empty(T)
    best_u_arr = np.zeros(T)
    cdef double[:] best_u = best_u_arr
    cdef Py_ssize_t[:] pts = np.empty(T + 1, dtype=np.intp)
    cdef Py_ssize_t[:, :] edges = np.empty((T + 1, 2), dtype=np.intp)
    cdef double best = INFINITY, s, gen, g, val
    cdef double eps = 1e-12
    cdef long long count = 0
    cdef Py_ssize_t k, t
    cdef bint ok
    with nogil:
        while True:
            s = 0.0
            for k in range(free):
                u[k] = levels[counter[k]]
                s += u[k]
            u[T - 1] = -s
            count += 1
            ok = (u[T - 1] >= u_min - eps) and (u[T - 1] <= u_max + eps)
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
                    g = dv[t] - u[t]
                    if g < g_min - eps or g > g_max + eps:
                        ok = False
                        break
                    gen += 0.5 * c * g * g + a * g
            if ok:
                val = gen + 0.5 * b * _cycle_cost(x, tol, pts, edges)
                if val < best:
                    best = val
                    for t in range(T):
                        best_u[t] = u[t]
            k = 0
            while k < free:
                counter[k] += 1
                if counter[k] < n:
                    break
                counter[k] = 0
                k += 1
            if k == free:
                break
    return best, best_u_arr, int(count)
