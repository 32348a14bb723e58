"""Independent reference computations used to derive and re-check test values.

Nothing here imports the solver, kernel or fitting code it is checking; each
oracle recomputes its quantity from the defining formula by a different route
(extended precision, exact rationals, enumeration or brute-force search).
"""
import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np


# weighted least squares ------------------------------------------------------

def wls_normal_equations(points, weights, scores, dps=40):
    """(intercept, values) from the normal equations solved at ``dps`` digits."""
    mpmath.mp.dps = dps
    n, d = points.shape
    A = mpmath.matrix(d + 1, d + 1)
    rhs = mpmath.matrix(d + 1, 1)
    rows = [[mpmath.mpf(1)] + [mpmath.mpf(float(v)) for v in points[i]] for i in range(n)]
    for i in range(n):
        k = mpmath.mpf(float(weights[i]))
        y = mpmath.mpf(float(scores[i]))
        r = rows[i]
        for a in range(d + 1):
            ka = k * r[a]
            rhs[a] += ka * y
            for b in range(a, d + 1):
                A[a, b] += ka * r[b]
    for a in range(d + 1):
        for b in range(a):
            A[a, b] = A[b, a]
    sol = mpmath.lu_solve(A, rhs)
    coef = [float(sol[i]) for i in range(d + 1)]
    return coef[0], np.array(coef[1:])


def weighted_loss(points, weights, scores, values, intercept, dps=40):
    """sum_z K(z) (w.z + w0 - f(z))^2 at ``dps`` digits."""
    mpmath.mp.dps = dps
    total = mpmath.mpf(0)
    for z, k, y in zip(points, weights, scores):
        g = mpmath.mpf(float(intercept)) + mpmath.fsum(mpmath.mpf(float(a)) * mpmath.mpf(float(b))
                                                       for a, b in zip(values, z))
        r = g - mpmath.mpf(float(y))
        total += mpmath.mpf(float(k)) * r * r
    return float(total)


# mechanism -------------------------------------------------------------------

def flip_distribution_exact(delta_row, beta, dps=50):
    """(p_stay, swap_probs) evaluated directly at high precision (no max-shift)."""
    mpmath.mp.dps = dps
    tau = len(delta_row)
    e = [mpmath.exp(-mpmath.mpf(float(v))) for v in delta_row]
    s = mpmath.fsum(e)
    eb = mpmath.exp(mpmath.mpf(float(beta)))
    denom = eb + tau - 1
    return float(eb / denom), np.array([float((tau - 1) / denom * ej / s) for ej in e])


def beta_bound_exact(epsilon_i, delta_row, dps=50):
    mpmath.mp.dps = dps
    tau = len(delta_row)
    e = [mpmath.exp(-mpmath.mpf(float(v))) for v in delta_row]
    qmin = min(e) / mpmath.fsum(e)
    return float(mpmath.mpf(float(epsilon_i)) + mpmath.log(tau - 1) + mpmath.log(qmin))


def swap_loss_change(points, weights, scores, values, intercept, a, b):
    """|L(w) - L(w with coordinates a, b exchanged)| by two direct loss evaluations."""
    w2 = np.array(values, dtype=float)
    w2[a], w2[b] = w2[b], w2[a]
    return abs(weighted_loss(points, weights, scores, values, intercept)
               - weighted_loss(points, weights, scores, w2, intercept))


# quadratic programs ----------------------------------------------------------

def qp_enumerate(H, g, A, rhs):
    """Exact minimum of 0.5 x'Hx + g'x s.t. Ax <= rhs by enumerating active sets."""
    p = len(g)
    m = len(rhs)
    best = None
    for r in range(min(m, p) + 1):
        for W in itertools.combinations(range(m), r):
            W = list(W)
            K = np.block([[H, A[W].T], [A[W], np.zeros((r, r))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-g, rhs[W]]))
            except np.linalg.LinAlgError:
                continue
            x = sol[:p]
            if np.all(A @ x <= rhs + 1e-10):
                v = 0.5 * x @ H @ x + g @ x
                if best is None or v < best[0]:
                    best = (v, x)
    return best


def qp_grid(objective, feasible, dim, half_width, final_step=1e-3, points=9, max_levels=400):
    """Multi-resolution grid search for a convex objective over a box around 0.

    Each level evaluates a ``points``^dim grid centred on the best feasible
    point so far. While that point lies on the grid's edge the grid is moved
    at the same spacing; once it is interior the spacing halves, until it
    reaches ``final_step``.
    """
    center = np.zeros(dim)
    step = 2.0 * half_width / (points - 1)
    best_val = math.inf
    best = None
    offsets = np.arange(points) - (points - 1) / 2
    edge = (points - 1) / 2
    for _ in range(max_levels):
        axes = [center[i] + step * offsets for i in range(dim)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        ok = feasible(grid)
        on_edge = False
        if ok.any():
            vals = objective(grid[ok])
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val = float(vals[i])
                best = grid[ok][i]
                on_edge = bool(np.any(np.abs(np.round((best - center) / step)) >= edge))
        if best is not None:
            center = best
        if on_edge:
            continue
        if step <= final_step:
            return best_val, best
        step = max(step / 2.0, final_step)
    return best_val, best


# bagging certificate ---------------------------------------------------------

def size_condition_exact(n, r, s, gap):
    """The certificate condition's left side with exact rationals (gap as Fraction)."""
    gap = Fraction(gap)
    n = Fraction(n)
    best = None
    for m in range(max(int(n) - r, 0), int(n) + r + 1):
        v = (Fraction(m) / n) ** s - 2 * ((max(n, Fraction(m)) - r) / n) ** s
        if best is None or v > best:
            best = v
    return best + 1 - gap


def largest_certified_exact(n, s, gap):
    r = 0
    if not size_condition_exact(n, 0, s, gap) < 0:
        return 0
    while size_condition_exact(n, r + 1, s, gap) < 0:
        r += 1
    return r


# binomial interval -----------------------------------------------------------

def clopper_pearson_lower_bisect(x, n, alpha, dps=40):
    """Lower endpoint p with P(Bin(n, p) >= x) = alpha, by bisection on the exact tail."""
    mpmath.mp.dps = dps
    if x == 0:
        return 0.0

    def upper_tail(p):
        return mpmath.fsum(mpmath.binomial(n, k) * p**k * (1 - p) ** (n - k) for k in range(x, n + 1))

    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    for _ in range(200):
        mid = (lo + hi) / 2
        if upper_tail(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)
