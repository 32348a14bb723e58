"""The two-step explanation randomization mechanism.

Step 1 perturbs the ranking of the aggregated explanation: each of the top-k
ranks either stays or swaps with one of the next tau ranks, with swap
probabilities that favour candidates whose swap changes the explanation loss
least. Step 2 corrects every sample-level explanation by the smallest
loss-increasing shift that makes it consistent with the realized swaps.

Ranks are 1-based throughout (rank 1 is the most extreme feature in the
configured orientation); feature indices are 0-based.
"""
from __future__ import annotations

import graphlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import kernels
from .data import make_rng
from .errors import ConfigurationError, ConstraintError, ContractError, SolverError
from .explainer import (GOODWARE_FIRST, MALWARE_FIRST, ORIENTATIONS, AggregatedExplanation,
                        Explanation, NeighborhoodSpec, aggregate, explain, explain_batch,
                        sample_neighborhood)

FORMAT_VERSION = 1
BETA_CAP = 700.0


@dataclass(frozen=True)
class MechanismConfig:
    """Mechanism parameters.

    ``epsilon`` is the per-feature budget eps_i, either one shared value or
    k values; the total budget is their sum. ``lam`` weighs the squared L2
    penalty on the Step 2 correction.
    """

    k: int = 10
    tau: int = 50
    epsilon: float | tuple = 1.0
    lam: float = 0.1
    tol: float = 1e-8
    max_iter: int = 100_000
    orientation: str = GOODWARE_FIRST
    seed: int = 0
    max_retries: int = 100

    @classmethod
    def from_total(cls, total_epsilon: float, k: int, **kwargs) -> "MechanismConfig":
        """Split ``total_epsilon`` evenly over the k protected ranks."""
        return cls(k=k, epsilon=total_epsilon / k, **kwargs)

    def epsilons(self) -> np.ndarray:
        eps = np.atleast_1d(np.asarray(self.epsilon, dtype=np.float64))
        if eps.shape == (1,):
            eps = np.full(self.k, eps[0])
        return eps

    @property
    def total_epsilon(self) -> float:
        return float(np.sum(self.epsilons()))

    def validate(self, d: int | None = None):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.tau < 2:
            raise ConfigurationError("tau must be >= 2")
        if self.tau < self.k:
            raise ConfigurationError(f"tau ({self.tau}) must be >= k ({self.k})")
        if d is not None and self.k + self.tau > d:
            raise ConfigurationError(f"k + tau = {self.k + self.tau} exceeds d = {d}")
        eps = self.epsilons()
        if eps.shape != (self.k,):
            raise ConfigurationError(f"expected 1 or k = {self.k} budgets, got {eps.size}")
        if not np.all(eps > 0) or not np.all(np.isfinite(eps)):
            raise ConfigurationError("privacy budgets must be positive and finite")
        if not self.lam >= 0:
            raise ConfigurationError("lam must be non-negative")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigurationError("tol must be positive and max_iter >= 1")
        if self.orientation not in ORIENTATIONS:
            raise ConfigurationError(f"orientation must be one of {ORIENTATIONS}")
        if self.max_retries < 1:
            raise ConfigurationError("max_retries must be >= 1")


@dataclass(frozen=True)
class FlipPlan:
    k: int
    tau: int
    epsilons: tuple
    delta_matrix: np.ndarray
    beta: tuple
    stay_prob: tuple
    swap_probs: np.ndarray
    flip_set: tuple
    collision_log: tuple
    sort_map: tuple
    orientation: str
    attempt: int = 0

    @property
    def total_epsilon(self) -> float:
        return float(sum(self.epsilons))

    def realized_epsilons(self) -> tuple:
        """Per-rank budget actually spent once beta is capped for numerical range."""
        out = []
        for i in range(self.k):
            log_qmin = _log_softmax_min(self.delta_matrix[i])
            out.append(min(self.beta[i], BETA_CAP) - math.log(self.tau - 1) - log_qmin)
        return tuple(out)


@dataclass(frozen=True)
class ConstraintSet:
    """Order constraints: (a, b) in ``pairs`` means w'[a] <= w'[b].

    ``support`` holds the indices whose correction may be nonzero; indices of
    pairs that sit beyond sorted rank k + tau are ``frozen`` and keep their
    original value.
    """

    pairs: tuple
    support: tuple
    frozen: tuple = ()

    def arrays(self, positions: dict, values: np.ndarray):
        ca, cb, rhs, fixed = [], [], [], []
        for a, b in self.pairs:
            pa, pb = positions.get(a, -1), positions.get(b, -1)
            if pa < 0 and pb < 0:
                fixed.append((a, b))
                continue
            ca.append(pa)
            cb.append(pb)
            rhs.append(values[b] - values[a])
        return (np.array(ca, dtype=np.int_), np.array(cb, dtype=np.int_),
                np.array(rhs, dtype=np.float64), fixed)


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    objective: float
    iterations: int
    residual: float
    polished: bool


@dataclass(frozen=True)
class SSEReport:
    full: float
    top: float | None
    identity_holds: bool | None


# Step 1 -----------------------------------------------------------------

def _log_softmax_min(delta_row) -> float:
    neg = -np.asarray(delta_row, dtype=np.float64)
    return float(np.min(neg) - logsumexp(neg))


def flip_distribution(delta_row, beta: float) -> tuple[float, np.ndarray]:
    """Stay probability and per-candidate swap probabilities for one protected rank."""
    delta = np.asarray(delta_row, dtype=np.float64)
    tau = delta.shape[0]
    if delta.ndim != 1 or tau < 2:
        raise ConfigurationError("a delta row needs at least 2 candidates (tau >= 2)")
    if not np.all(np.isfinite(delta)):
        raise ContractError("delta row must be finite")
    beta = min(float(beta), BETA_CAP)
    e = np.exp(-(delta - delta.min()))
    q = e / e.sum()
    eb = math.exp(beta)
    denom = eb + tau - 1
    return eb / denom, ((tau - 1) / denom) * q


def beta_bound(epsilon_i: float, tau: int, delta_row) -> float:
    """Largest beta meeting budget ``epsilon_i``: eps_i + ln(tau - 1) + ln(min_j q_j)."""
    if not epsilon_i > 0:
        raise ConfigurationError("epsilon_i must be positive")
    if tau < 2 or len(delta_row) != tau:
        raise ConfigurationError("tau must be >= 2 and match the delta row length")
    return float(epsilon_i + math.log(tau - 1) + _log_softmax_min(delta_row))


def _swap_delta(values, intercept, nb, idx, k, tau):
    """|L - L_swapped| for all (rank i <= k, rank k < j <= k + tau) of one sample.

    Swapping coordinates a and b moves w by c(e_a - e_b) with c = w_b - w_a;
    the quadratic loss then changes by 2c h'(e_a - e_b) + c^2 (G_aa + G_bb - 2G_ab)
    where G = Z'KZ and h = Z'K r at the current residual r.
    """
    Z = nb.points[:, idx]
    r = nb.points @ values + intercept - nb.scores
    ZK = Z.T * nb.weights
    G = ZK @ Z
    h = ZK @ r
    w = values[idx]
    a = np.arange(k)
    b = k + np.arange(tau)
    c = w[b][None, :] - w[a][:, None]
    lin = 2.0 * c * (h[a][:, None] - h[b][None, :])
    diag = np.diag(G)
    quad = c * c * (diag[a][:, None] + diag[b][None, :] - 2.0 * G[np.ix_(a, b)])
    return np.abs(lin + quad)


def compute_delta(f, X, i: int, j: int, spec: NeighborhoodSpec, sort_map, refs=None) -> float:
    """Mean over samples of |L(w_x) - L(w_x with ranks i and j swapped)|, evaluated directly."""
    v = np.asarray(sort_map)
    a, b = int(v[i - 1]), int(v[j - 1])
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    refs = range(X.shape[0]) if refs is None else refs
    total = 0.0
    for x, ref in zip(X, refs):
        e = explain(f, x, spec, int(ref))
        w = e.values.copy()
        w[a], w[b] = w[b], w[a]
        total += abs(e.loss() - e.with_values(w).loss())
    return total / X.shape[0]


def delta_matrix(f, X, sort_map, k: int, tau: int, spec: NeighborhoodSpec, refs=None,
                 threads: int = 1) -> np.ndarray:
    """The k x tau matrix of compute_delta values, via the closed-form swap change."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    refs = list(range(X.shape[0]) if refs is None else refs)
    idx = np.asarray(sort_map)[: k + tau]

    def one(n):
        e = explain(f, X[n], spec, int(refs[n]))
        return _swap_delta(e.values, e.intercept, e.neighborhood, idx, k, tau)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(X.shape[0])))
    else:
        parts = [one(n) for n in range(X.shape[0])]
    total = np.zeros((k, tau))
    for p in parts:
        total += p
    return total / X.shape[0]


def _draw(dist: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(dist)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(dist) - 1))


def sample_flips(stay_prob, swap_probs, k: int, rng: np.random.Generator) -> tuple[tuple, tuple]:
    """Draw stay/swap for ranks 1..k in order; a candidate already taken is re-drawn.

    The re-draw uses the same rank's distribution restricted to "stay" plus
    the unused candidates, renormalized. Returns (S, collision_log).
    """
    used = set()
    flips, log = [], []
    for i in range(k):
        dist = np.concatenate([[stay_prob[i]], swap_probs[i]])
        out = _draw(dist, rng)
        if out > 0 and out in used:
            restricted = dist.copy()
            restricted[sorted(used)] = 0.0
            first = out
            out = _draw(restricted, rng)
            log.append({"rank": i + 1, "collided_with": k + first, "redrawn": (k + out) if out else None})
        if out > 0:
            used.add(out)
            flips.append((i + 1, k + out))
    return tuple(flips), tuple(log)


def randomize_aggregate(f, X, agg: AggregatedExplanation, cfg: MechanismConfig, spec: NeighborhoodSpec,
                        rng: np.random.Generator, refs=None, threads: int = 1, delta=None,
                        attempt: int = 0) -> FlipPlan:
    """Step 1: compute the delta matrix over ``X`` and sample the flip set."""
    d = len(agg.sort_map)
    cfg.validate(d)
    k, tau = cfg.k, cfg.tau
    if delta is None:
        delta = delta_matrix(f, X, agg.sort_map, k, tau, spec, refs, threads)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (k, tau):
        raise ContractError(f"delta matrix must be {k} x {tau}")
    eps = cfg.epsilons()
    beta = [beta_bound(float(eps[i]), tau, delta[i]) for i in range(k)]
    stay, swaps = [], []
    for i in range(k):
        p, q = flip_distribution(delta[i], beta[i])
        stay.append(p)
        swaps.append(q)
    swaps = np.array(swaps)
    flips, log = sample_flips(stay, swaps, k, rng)
    delta.setflags(write=False)
    swaps.setflags(write=False)
    return FlipPlan(k, tau, tuple(float(e) for e in eps), delta, tuple(beta), tuple(stay), swaps,
                    flips, log, tuple(int(t) for t in agg.sort_map), agg.orientation, attempt)


# Step 2 -----------------------------------------------------------------

def build_constraints(flip_set, sort_map, k: int, tau: int | None = None,
                      orientation: str = MALWARE_FIRST) -> ConstraintSet:
    """Order constraints that place each swapped pair at the other's rank.

    For (i, j) in S the pairs (v(i+1), v(j)), (v(j), v(i-1)), (v(i), v(j-1)),
    (v(j+1), v(i)) are added for a descending ranking (``malware_first``); a
    goodware_first ranking is ascending, so every pair is reversed. Pairs that
    reference rank 0 or d+1, or relate a feature to itself, are dropped.
    """
    v = [int(t) for t in sort_map]
    d = len(v)
    if orientation not in ORIENTATIONS:
        raise ConfigurationError(f"orientation must be one of {ORIENTATIONS}")
    seen_j = set()
    for i, j in flip_set:
        if not 1 <= i <= k or j <= k or (tau is not None and j > k + tau) or j > d:
            raise ContractError(f"flip ({i}, {j}) is outside the protected/candidate ranks")
        if j in seen_j:
            raise ContractError(f"candidate rank {j} appears twice in the flip set")
        seen_j.add(j)
    pairs = []
    for i, j in flip_set:
        for ra, rb in ((i + 1, j), (j, i - 1), (i, j - 1), (j + 1, i)):
            if not (1 <= ra <= d and 1 <= rb <= d):
                continue
            a, b = v[ra - 1], v[rb - 1]
            if orientation == GOODWARE_FIRST:
                a, b = b, a
            if a != b and (a, b) not in pairs:
                pairs.append((a, b))
    graph = graphlib.TopologicalSorter()
    for a, b in pairs:
        graph.add(b, a)
    try:
        graph.prepare()
    except graphlib.CycleError as exc:
        raise ConstraintError(f"order constraints contain a cycle: {exc.args[1]}") from None
    frozen = set(v[k + tau:]) if tau is not None else set()
    touched = sorted({t for p in pairs for t in p})
    support = tuple(t for t in touched if t not in frozen)
    return ConstraintSet(tuple(pairs), support, tuple(t for t in touched if t in frozen))


def _constraint_matrix(ca, cb, p):
    A = np.zeros((len(ca), p))
    for c, (a, b) in enumerate(zip(ca, cb)):
        if a >= 0:
            A[c, a] += 1.0
        if b >= 0:
            A[c, b] -= 1.0
    return A


def _polish(H, g, A, rhs, x0, tol, work=None, factor=None):
    """Active-set refinement from ``x0``; returns (x, kkt residual) or None.

    The working set starts as the constraints nearly active at ``x0`` unless
    given. Each step solves the equality-constrained problem through the
    Schur complement A H^-1 A'. None means no KKT point was certified and the
    caller keeps iterating.
    """
    p = H.shape[0]
    m = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(rhs))) if m else 1.0)
    if work is None:
        work = [c for c in range(m) if abs(rhs[c] - A[c] @ x0) <= 1e-6 * scale]
    work = list(work)
    cho = factor if factor is not None else linalg.cho_factor(H)
    x_free = linalg.cho_solve(cho, -g)
    HiAt = linalg.cho_solve(cho, A.T) if m else np.zeros((p, 0))
    S = A @ HiAt
    slack_free = rhs - A @ x_free
    for _ in range(2 * m + 5):
        if work:
            mult = np.linalg.lstsq(S[np.ix_(work, work)], -slack_free[work], rcond=None)[0]
            x = x_free - HiAt[:, work] @ mult
        else:
            mult = np.zeros(0)
            x = x_free
        slack = rhs - A @ x
        outside = np.ones(m, dtype=bool)
        outside[work] = False
        viol = np.flatnonzero(outside & (slack < -1e-12 * scale))
        if viol.size:
            work.append(int(viol[np.argmin(slack[viol])]))
            continue
        if work and mult.min() < 0:
            work.pop(int(np.argmin(mult)))
            continue
        grad = H @ x + g
        stat = float(np.max(np.abs(grad + A[work].T @ mult), initial=0.0))
        # a rank-deficient working set (parallel rows) can leave its own rows unmet
        if stat > tol or np.min(slack, initial=0.0) < -1e-9 * scale:
            return None
        if work and np.max(np.abs(slack[work])) > 1e-9 * scale:
            return None
        return x, stat
    return None


def solve_qp(H, g, ca, cb, rhs, tol: float = 1e-8, max_iter: int = 100_000, x0=None) -> QPResult:
    """min 0.5 x'Hx + g'x subject to x[ca] - x[cb] <= rhs (index -1 = absent).

    Accelerated projected gradient with Dykstra projections does the bulk of
    the work; each batch of iterations is followed by an active-set polish
    that, when it certifies a KKT point, ends the solve at machine precision.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    ca = np.asarray(ca, dtype=np.int_)
    cb = np.asarray(cb, dtype=np.int_)
    p = g.shape[0]
    A = _constraint_matrix(ca, cb, p)
    lmax = float(linalg.eigvalsh(H, subset_by_index=[p - 1, p - 1])[0])
    if not lmax > 0:
        raise ContractError("quadratic term must be positive definite")
    step = 1.0 / lmax
    if x0 is None:
        # the correction problems are small, so an active-set solve from the
        # unconstrained minimizer usually finishes without any gradient steps
        factor = linalg.cho_factor(H)
        x = linalg.cho_solve(factor, -g)
        polished = _polish(H, g, A, rhs, x, tol, work=(), factor=factor)
        if polished is not None:
            xp, res = polished
            return QPResult(xp, float(0.5 * xp @ H @ xp + g @ xp), 0, res, True)
        x = np.zeros(p)
    else:
        x = np.asarray(x0, dtype=np.float64)
    done, chunk = 0, 200
    gm = math.inf
    while done < max_iter:
        n_it = min(chunk, max_iter - done)
        x, it, converged, gm = kernels.pg_dykstra(H, g, ca, cb, rhs, x, step, tol, n_it)
        done += it
        polished = _polish(H, g, A, rhs, x, tol)
        if polished is not None:
            xp, res = polished
            return QPResult(xp, float(0.5 * xp @ H @ xp + g @ xp), done, res, True)
        if converged:
            return QPResult(x, float(0.5 * x @ H @ x + g @ x), done, gm, False)
        chunk *= 2
    raise SolverError(f"correction did not converge in {max_iter} iterations (residual {gm:.3e})",
                      residual=gm, iterations=done)


def correction_problem(w_x: Explanation, Q: ConstraintSet, lam: float):
    """Quadratic data of the Step 2 program on the support of Q.

    Returns (support, H, g, ca, cb, rhs) for the objective
    phi'(Z'KZ + lam I)phi + 2 (Z'K r)'phi, written as 0.5 phi'H phi + g'phi.
    """
    nb = w_x.neighborhood
    support = np.asarray(Q.support, dtype=np.int_)
    Z = nb.points[:, support]
    ZK = Z.T * nb.weights
    r = w_x.residual()
    H = 2.0 * (ZK @ Z + lam * np.eye(len(support)))
    g = 2.0 * (ZK @ r)
    positions = {int(t): q for q, t in enumerate(support)}
    ca, cb, rhs, fixed = Q.arrays(positions, w_x.values)
    for a, b in fixed:
        if w_x.values[a] > w_x.values[b]:
            raise ConstraintError(f"constraint ({a}, {b}) relates two frozen coordinates and is violated")
    return support, H, g, ca, cb, rhs


def correct_sample(f, x, w_x: Explanation, Q: ConstraintSet, cfg: MechanismConfig,
                   spec: NeighborhoodSpec, return_info: bool = False):
    """Step 2 for one sample: w'_x = w_x + phi* on the support of Q; intercept unchanged."""
    if w_x.neighborhood is None:
        from dataclasses import replace

        w_x = replace(w_x, neighborhood=sample_neighborhood(f, x, spec, w_x.sample_ref))
    if not Q.support:
        out = w_x
        info = QPResult(np.zeros(0), 0.0, 0, 0.0, False)
        return (out, info) if return_info else out
    support, H, g, ca, cb, rhs = correction_problem(w_x, Q, cfg.lam)
    info = solve_qp(H, g, ca, cb, rhs, cfg.tol, cfg.max_iter)
    values = w_x.values.copy()
    values[support] = values[support] + info.x
    out = w_x.with_values(values)
    return (out, info) if return_info else out


def sse_utility(originals, corrected, cfg: MechanismConfig | None = None, sort_map=None) -> SSEReport:
    """Sum of squared explanation changes, over all d and over the first k + tau ranks."""
    originals, corrected = list(originals), list(corrected)
    if len(originals) != len(corrected):
        raise ContractError("originals and corrected differ in length")
    # fsum is exactly rounded, so the two totals agree bit for bit whenever
    # every coordinate outside the first k + tau ranks is unchanged
    full_terms, top_terms = [], []
    with_top = cfg is not None and sort_map is not None
    idx = np.asarray(sort_map)[: cfg.k + cfg.tau] if with_top else None
    identity = True if with_top else None
    for o, c in zip(originals, corrected):
        if o.n_features != c.n_features:
            raise ContractError("explanation dimensions differ")
        diff = c.values - o.values
        full_terms.extend((diff * diff).tolist())
        if with_top:
            top_terms.extend((diff[idx] ** 2).tolist())
            rest = np.ones(o.n_features, dtype=bool)
            rest[idx] = False
            if not np.array_equal(c.values[rest], o.values[rest]):
                identity = False
    full = math.fsum(full_terms)
    top = math.fsum(top_terms) if with_top else None
    if with_top and full != top:
        identity = False
    return SSEReport(full, top, identity)


# deployment ---------------------------------------------------------------

@dataclass(frozen=True)
class Deployment:
    """A scorer with a fixed FlipPlan; answers queries with corrected explanations."""

    scorer: object
    spec: NeighborhoodSpec
    cfg: MechanismConfig
    aggregate: AggregatedExplanation
    plan: FlipPlan
    constraints: ConstraintSet
    retries: tuple = field(default=())

    def explain(self, x, sample_ref: int = 0, return_info: bool = False):
        e = explain(self.scorer, x, self.spec, sample_ref)
        return correct_sample(self.scorer, x, e, self.constraints, self.cfg, self.spec, return_info)

    def query(self, X, refs=None, threads: int = 1):
        """(prediction, corrected explanation) for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        refs = list(range(X.shape[0]) if refs is None else refs)
        preds = self.scorer.predict(X)

        def one(n):
            return self.explain(X[n], int(refs[n]))

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                expl = list(pool.map(one, range(X.shape[0])))
        else:
            expl = [one(n) for n in range(X.shape[0])]
        return list(zip((int(p) for p in preds), expl))


def deploy(f, X, spec: NeighborhoodSpec, cfg: MechanismConfig, refs=None, threads: int = 1,
           explanations=None) -> Deployment:
    """Aggregate over ``X``, run Step 1 once and freeze the resulting plan.

    A flip set whose constraints form a cycle is discarded and Step 1 is
    re-sampled from the next substream; discarded attempts are recorded.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cfg.validate(X.shape[1])
    if explanations is None:
        explanations = explain_batch(f, X, spec, refs, threads)
    agg = aggregate(explanations, cfg.orientation)
    delta = delta_matrix(f, X, agg.sort_map, cfg.k, cfg.tau, spec, refs, threads)
    return freeze_plan(f, X, agg, cfg, spec, delta)


def freeze_plan(f, X, agg: AggregatedExplanation, cfg: MechanismConfig, spec: NeighborhoodSpec,
                delta: np.ndarray) -> Deployment:
    """Sample Step 1 until the flip set yields acyclic constraints; attempt a uses substream (seed, "flip", a)."""
    cfg.validate(len(agg.sort_map))
    retries = []
    for attempt in range(cfg.max_retries):
        rng = make_rng(cfg.seed, "flip", attempt)
        plan = randomize_aggregate(f, X, agg, cfg, spec, rng, delta=delta, attempt=attempt)
        try:
            Q = build_constraints(plan.flip_set, agg.sort_map, cfg.k, cfg.tau, cfg.orientation)
        except ConstraintError as exc:
            retries.append({"attempt": attempt, "reason": str(exc)})
            continue
        return Deployment(f, spec, cfg, agg, plan, Q, tuple(retries))
    raise ConstraintError(f"no acyclic flip set in {cfg.max_retries} attempts")


# serialization ---------------------------------------------------------------

def plan_to_dict(plan: FlipPlan, constraints: ConstraintSet | None = None) -> dict:
    doc = {
        "format": "xrandlab-flipplan",
        "version": FORMAT_VERSION,
        "k": plan.k,
        "tau": plan.tau,
        "epsilons": list(plan.epsilons),
        "total_epsilon": plan.total_epsilon,
        "realized_epsilons": list(plan.realized_epsilons()),
        "beta": list(plan.beta),
        "stay_prob": list(plan.stay_prob),
        "swap_probs": plan.swap_probs.tolist(),
        "delta_matrix": plan.delta_matrix.tolist(),
        "S": [list(p) for p in plan.flip_set],
        "collision_log": list(plan.collision_log),
        "sort_map": list(plan.sort_map),
        "orientation": plan.orientation,
        "attempt": plan.attempt,
    }
    if constraints is not None:
        doc["Q"] = [list(p) for p in constraints.pairs]
        doc["support"] = list(constraints.support)
        doc["frozen"] = list(constraints.frozen)
    return doc


def plan_to_json(plan: FlipPlan, constraints: ConstraintSet | None = None, extra: dict | None = None) -> str:
    doc = plan_to_dict(plan, constraints)
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def plan_from_json(text: str) -> tuple[FlipPlan, ConstraintSet | None]:
    try:
        doc = json.loads(text)
        if doc.get("format") != "xrandlab-flipplan":
            raise ValueError("not a flip plan document")
        if doc["version"] != FORMAT_VERSION:
            raise ContractError(f"unsupported flip plan version {doc['version']}")
        plan = FlipPlan(
            doc["k"], doc["tau"], tuple(doc["epsilons"]), np.array(doc["delta_matrix"], dtype=np.float64),
            tuple(doc["beta"]), tuple(doc["stay_prob"]), np.array(doc["swap_probs"], dtype=np.float64),
            tuple(tuple(p) for p in doc["S"]), tuple(doc["collision_log"]), tuple(doc["sort_map"]),
            doc["orientation"], doc["attempt"],
        )
        Q = None
        if "Q" in doc:
            Q = ConstraintSet(tuple(tuple(p) for p in doc["Q"]), tuple(doc["support"]), tuple(doc["frozen"]))
        return plan, Q
    except ContractError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ContractError(f"malformed flip plan: {exc}") from None


def save_plan(path, plan: FlipPlan, constraints: ConstraintSet | None = None, extra: dict | None = None):
    Path(path).write_text(plan_to_json(plan, constraints, extra), encoding="utf-8", newline="\n")
