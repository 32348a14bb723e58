"""Pure-Python implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or when ``XRANDLAB_PURE=1``).
"""
import math

import numpy as np


def project_polyhedron(z, ca, cb, rhs, max_sweeps=10000, tol=1e-13):
    """Euclidean projection of ``z`` onto {x : x[ca[c]] - x[cb[c]] <= rhs[c]}.

    An index of -1 means the coordinate is absent from that constraint.
    Dykstra's alternating projection; returns (x, sweeps).
    """
    x = np.array(z, dtype=np.float64)
    m = len(rhs)
    if m == 0:
        return x, 0
    incr = np.zeros((m, x.shape[0]))
    for sweep in range(1, max_sweeps + 1):
        moved = 0.0
        for c in range(m):
            a, b = int(ca[c]), int(cb[c])
            y = x + incr[c]
            val = (y[a] if a >= 0 else 0.0) - (y[b] if b >= 0 else 0.0)
            viol = val - rhs[c]
            x_new = y.copy()
            if viol > 0:
                norm2 = int(a >= 0) + int(b >= 0)
                step = viol / norm2
                if a >= 0:
                    x_new[a] -= step
                if b >= 0:
                    x_new[b] += step
            incr[c] = y - x_new
            moved += float(np.sum((x_new - x) ** 2))
            x = x_new
        if moved <= tol * tol:
            return x, sweep
    return x, max_sweeps


def pg_dykstra(H, g, ca, cb, rhs, x0, step, tol, max_iter, proj_sweeps=10000, proj_tol=1e-13):
    """Accelerated projected gradient for min 0.5 x'Hx + g'x over the pairwise polyhedron.

    Returns (x, iterations, converged, gradient-mapping norm).
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    x, _ = project_polyhedron(x0, ca, cb, rhs, proj_sweeps, proj_tol)
    y = x.copy()
    t = 1.0
    gm = math.inf

    def objective(v):
        return 0.5 * v @ H @ v + g @ v

    f_prev = objective(x)
    for it in range(1, max_iter + 1):
        grad = H @ y + g
        x_new, _ = project_polyhedron(y - step * grad, ca, cb, rhs, proj_sweeps, proj_tol)
        gm = float(np.linalg.norm(x_new - y)) / step
        if gm <= tol:
            return x_new, it, True, gm
        f_new = objective(x_new)
        if f_new > f_prev:
            # adaptive restart: drop momentum
            t = 1.0
            y = x.copy()
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_next) * (x_new - x)
        x, t, f_prev = x_new, t_next, f_new
    return x, max_iter, False, gm


def best_split(X, order, in_node, grad, hess, reg, min_hess):
    """Best single-feature threshold split of the rows flagged in ``in_node``.

    ``order[j]`` lists all row indices sorted by column ``j``. The gain is the
    usual second-order boosting gain. Returns (feature, threshold, gain) with
    feature -1 when no admissible split exists.
    """
    n, d = X.shape
    mask = np.asarray(in_node, dtype=bool)
    # sequential sums, matching the compiled kernel bit for bit
    G = float(np.cumsum(grad[mask])[-1]) if mask.any() else 0.0
    Hs = float(np.cumsum(hess[mask])[-1]) if mask.any() else 0.0
    parent = G * G / (Hs + reg)
    best = (-1, 0.0, 0.0)
    for j in range(d):
        idx = order[j][mask[order[j]]]
        if len(idx) < 2:
            continue
        vals = X[idx, j]
        gl = np.cumsum(grad[idx])[:-1]
        hl = np.cumsum(hess[idx])[:-1]
        boundary = vals[1:] > vals[:-1]
        ok = boundary & (hl >= min_hess) & (Hs - hl >= min_hess)
        if not ok.any():
            continue
        gr = G - gl
        hr = Hs - hl
        gain = gl * gl / (hl + reg) + gr * gr / (hr + reg) - parent
        gain = np.where(ok, gain, -np.inf)
        p = int(np.argmax(gain))
        if gain[p] > best[2]:
            best = (j, 0.5 * (vals[p] + vals[p + 1]), float(gain[p]))
    return best


def size_condition(n, r, s, gap):
    """Left-hand side of the bagging certificate condition for radius ``r``.

    max over |D+| in [n - r, n + r] of (|D+|/n)^s - 2((max(n,|D+|) - r)/n)^s,
    plus 1 - gap. The certificate holds when this is negative.
    """
    best = -math.inf
    for m in range(max(n - r, 0), n + r + 1):
        v = (m / n) ** s - 2.0 * ((max(n, m) - r) / n) ** s
        if v > best:
            best = v
    return best + 1.0 - gap


def certified_size(n, s, gap):
    """Largest r with size_condition(n, r, s, gap) < 0, or 0 when none."""
    if not size_condition(n, 0, s, gap) < 0:
        return 0
    lo, hi = 0, n  # condition holds at lo, fails at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if size_condition(n, mid, s, gap) < 0:
            lo = mid
        else:
            hi = mid
    return lo
