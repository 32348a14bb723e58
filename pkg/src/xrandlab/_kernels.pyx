# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, INFINITY

cnp.import_array()


cdef Py_ssize_t _dykstra(double[::1] x, const long[::1] ca, const long[::1] cb,
                         const double[::1] rhs, double[:, ::1] incr,
                         Py_ssize_t max_sweeps, double tol) noexcept nogil:
    cdef Py_ssize_t m = rhs.shape[0]
    cdef Py_ssize_t c, sweep
    cdef long a, b
    cdef double ya, yb, na, nb, val, viol, stp, moved, da, db, norm2
    for c in range(m):
        a = ca[c]
        b = cb[c]
        if a >= 0:
            incr[c, a] = 0.0
        if b >= 0:
            incr[c, b] = 0.0
    if m == 0:
        return 0
    for sweep in range(1, max_sweeps + 1):
        moved = 0.0
        for c in range(m):
            a = ca[c]
            b = cb[c]
            # a half-space only touches its own coordinates, so the Dykstra
            # increment is supported on {a, b}
            ya = (x[a] + incr[c, a]) if a >= 0 else 0.0
            yb = (x[b] + incr[c, b]) if b >= 0 else 0.0
            val = ya - yb
            viol = val - rhs[c]
            norm2 = (1.0 if a >= 0 else 0.0) + (1.0 if b >= 0 else 0.0)
            stp = viol / norm2 if viol > 0 else 0.0
            da = 0.0
            db = 0.0
            if a >= 0:
                na = ya - stp
                da = na - x[a]
                incr[c, a] = ya - na
                x[a] = na
            if b >= 0:
                nb = yb + stp
                db = nb - x[b]
                incr[c, b] = yb - nb
                x[b] = nb
            moved += da * da + db * db
        if moved <= tol * tol:
            return sweep
    return max_sweeps


def project_polyhedron(z, ca, cb, rhs, Py_ssize_t max_sweeps=10000, double tol=1e-13):
    cdef cnp.ndarray[double, ndim=1] x = np.array(z, dtype=np.float64)
    cdef const long[::1] ca_v = np.ascontiguousarray(ca, dtype=np.int_)
    cdef const long[::1] cb_v = np.ascontiguousarray(cb, dtype=np.int_)
    cdef const double[::1] rhs_v = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef double[::1] xv = x
    cdef double[:, ::1] incr = np.zeros((rhs_v.shape[0], x.shape[0]))
    cdef Py_ssize_t sweeps
    with nogil:
        sweeps = _dykstra(xv, ca_v, cb_v, rhs_v, incr, max_sweeps, tol)
    return x, sweeps


def pg_dykstra(H, g, ca, cb, rhs, x0, double step, double tol, Py_ssize_t max_iter,
               Py_ssize_t proj_sweeps=10000, double proj_tol=1e-13):
    cdef const double[:, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const long[::1] ca_v = np.ascontiguousarray(ca, dtype=np.int_)
    cdef const long[::1] cb_v = np.ascontiguousarray(cb, dtype=np.int_)
    cdef const double[::1] rhs_v = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t p = gv.shape[0]
    cdef Py_ssize_t m = rhs_v.shape[0]
    cdef double[:, ::1] incr = np.zeros((m, p))
    cdef cnp.ndarray[double, ndim=1] x_arr = np.array(x0, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] y = np.empty(p)
    cdef double[::1] xn = np.empty(p)
    cdef double[::1] hv = np.empty(p)
    cdef Py_ssize_t i, j, it
    cdef double t = 1.0, t_next, gm = INFINITY, f_prev, f_new, acc, diff, beta
    cdef bint converged = False

    with nogil:
        _dykstra(x, ca_v, cb_v, rhs_v, incr, proj_sweeps, proj_tol)
        f_prev = _objective(Hv, gv, x, hv)
        for i in range(p):
            y[i] = x[i]
        for it in range(1, max_iter + 1):
            for i in range(p):
                acc = gv[i]
                for j in range(p):
                    acc += Hv[i, j] * y[j]
                xn[i] = y[i] - step * acc
            _dykstra(xn, ca_v, cb_v, rhs_v, incr, proj_sweeps, proj_tol)
            acc = 0.0
            for i in range(p):
                diff = xn[i] - y[i]
                acc += diff * diff
            gm = sqrt(acc) / step
            if gm <= tol:
                for i in range(p):
                    x[i] = xn[i]
                converged = True
                break
            f_new = _objective(Hv, gv, xn, hv)
            if f_new > f_prev:
                t = 1.0
                for i in range(p):
                    y[i] = x[i]
                continue
            t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            for i in range(p):
                y[i] = xn[i] + beta * (xn[i] - x[i])
                x[i] = xn[i]
            t = t_next
            f_prev = f_new
    if not converged:
        it = max_iter
    return x_arr, it, converged, gm


cdef double _objective(const double[:, ::1] H, const double[::1] g, double[::1] x, double[::1] work) noexcept nogil:
    cdef Py_ssize_t p = g.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc, total = 0.0
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += H[i, j] * x[j]
        total += x[i] * (0.5 * acc + g[i])
    return total


def best_split(X, order, in_node, grad, hess, double reg, double min_hess):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long[:, ::1] ov = np.ascontiguousarray(order, dtype=np.int_)
    cdef const cnp.uint8_t[::1] mv = np.ascontiguousarray(in_node, dtype=np.uint8)
    cdef const double[::1] gv = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(hess, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t d = Xv.shape[1]
    cdef Py_ssize_t j, q, row
    cdef double G = 0.0, Hs = 0.0, parent, gl, hl, gr, hr, gain
    cdef double best_gain = 0.0, best_thr = 0.0, prev_val
    cdef long best_feat = -1
    cdef bint have_prev
    with nogil:
        for q in range(n):
            if mv[q]:
                G += gv[q]
                Hs += hv[q]
        parent = G * G / (Hs + reg)
        for j in range(d):
            gl = 0.0
            hl = 0.0
            have_prev = False
            prev_val = 0.0
            for q in range(n):
                row = ov[j, q]
                if not mv[row]:
                    continue
                if have_prev and Xv[row, j] > prev_val and hl >= min_hess and Hs - hl >= min_hess:
                    gr = G - gl
                    hr = Hs - hl
                    gain = gl * gl / (hl + reg) + gr * gr / (hr + reg) - parent
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = j
                        best_thr = 0.5 * (prev_val + Xv[row, j])
                gl += gv[row]
                hl += hv[row]
                prev_val = Xv[row, j]
                have_prev = True
    return best_feat, best_thr, best_gain


cdef double _size_condition(long n, long r, double s, double gap) noexcept nogil:
    cdef long m, lo = n - r if n - r > 0 else 0
    cdef double v, best = -INFINITY, top
    for m in range(lo, n + r + 1):
        top = <double>(n if n > m else m) - r
        v = pow(<double>m / n, s) - 2.0 * pow(top / n, s)
        if v > best:
            best = v
    return best + 1.0 - gap


def size_condition(long n, long r, double s, double gap):
    return _size_condition(n, r, s, gap)


def certified_size(long n, double s, double gap):
    cdef long lo = 0, hi = n, mid
    if not _size_condition(n, 0, s, gap) < 0:
        return 0
    with nogil:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _size_condition(n, mid, s, gap) < 0:
                lo = mid
            else:
                hi = mid
    return lo
