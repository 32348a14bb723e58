"""Kernel-weighted local linear surrogate explanations.

For a sample ``x`` a neighborhood N(x) is drawn, the scorer is queried on it,
and the surrogate g(z) = w0 + w.z is fit by weighted least squares with
weights exp(-||z - x||^2 / sigma^2). The fitted objective is the explanation
loss L; the XRand correction step reuses the exact same neighborhood.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist
from scipy.special import logit

from .data import make_rng
from .errors import ConfigurationError, ContractError, ExplanationError

GOODWARE_FIRST = "goodware_first"
MALWARE_FIRST = "malware_first"
ORIENTATIONS = (GOODWARE_FIRST, MALWARE_FIRST)
SCHEMES = ("mask", "jitter")
ERASE_FRACTION = 0.2
CLIP = 1e-6


@dataclass(frozen=True)
class NeighborhoodSpec:
    """How N(x) is sampled.

    ``n_neighbors`` defaults to 2d + 10 and ``kernel_width`` to 0.75 times
    the mean pairwise distance inside N(x). The ``mask`` scheme replaces a
    uniformly sized random subset of coordinates by ``reference``; ``jitter``
    adds N(0, jitter_scale^2) noise to every coordinate.
    """

    reference: tuple
    n_neighbors: int | None = None
    kernel_width: float | None = None
    scheme: str = "mask"
    jitter_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reference", tuple(float(v) for v in self.reference))

    @property
    def n_features(self) -> int:
        return len(self.reference)

    def resolved_neighbors(self) -> int:
        return self.n_neighbors if self.n_neighbors is not None else 2 * self.n_features + 10

    def validate(self):
        d = self.n_features
        if d < 1:
            raise ConfigurationError("reference vector must be non-empty")
        if not all(math.isfinite(v) for v in self.reference):
            raise ConfigurationError("reference vector must be finite")
        if self.resolved_neighbors() < d + 2:
            raise ConfigurationError(f"n_neighbors must be >= d + 2 = {d + 2}")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ConfigurationError("kernel_width must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if not self.jitter_scale > 0:
            raise ConfigurationError("jitter_scale must be positive")


@dataclass(frozen=True, eq=False)
class Neighborhood:
    points: np.ndarray
    weights: np.ndarray
    scores: np.ndarray
    sigma: float

    def gram(self, index=None) -> tuple[np.ndarray, np.ndarray]:
        """Weighted Gram block Z'KZ and Z'K over the selected columns."""
        Z = self.points if index is None else self.points[:, index]
        ZK = Z.T * self.weights
        return ZK @ Z, ZK


@dataclass(frozen=True, eq=False)
class Explanation:
    values: np.ndarray
    intercept: float
    sample_ref: int = 0
    neighborhood: Neighborhood | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ContractError("explanation values must be a vector")
        if not np.all(np.isfinite(v)) or not math.isfinite(self.intercept):
            raise ContractError("explanation entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "Explanation":
        return replace(self, values=values)

    def residual(self) -> np.ndarray:
        nb = self._require_neighborhood()
        return nb.points @ self.values + self.intercept - nb.scores

    def loss(self) -> float:
        nb = self._require_neighborhood()
        r = self.residual()
        return float(np.sum(nb.weights * r * r))

    def _require_neighborhood(self) -> Neighborhood:
        if self.neighborhood is None:
            raise ContractError("explanation carries no cached neighborhood")
        return self.neighborhood


@dataclass(frozen=True)
class AggregatedExplanation:
    values: np.ndarray
    sort_map: np.ndarray
    orientation: str

    def rank_of(self) -> np.ndarray:
        """Inverse of ``sort_map``: 0-based rank of every feature index."""
        inv = np.empty_like(self.sort_map)
        inv[self.sort_map] = np.arange(len(self.sort_map))
        return inv


@dataclass(frozen=True)
class LogOdds:
    value: float
    clipped: bool
    predicted: int
    erased: tuple


def sample_neighborhood(f, x, spec: NeighborhoodSpec, sample_ref: int = 0) -> Neighborhood:
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    d = spec.n_features
    if x.shape != (d,):
        raise ContractError(f"sample must have {d} features, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("sample must be finite")
    n = spec.resolved_neighbors()
    rng = make_rng(spec.seed, "neighborhood", sample_ref)
    Z = np.tile(x, (n, 1))
    if spec.scheme == "mask":
        ref = np.asarray(spec.reference)
        counts = rng.integers(1, d + 1, size=n - 1)
        # a uniformly random subset of size counts[row]: the columns whose
        # rank under an iid uniform key falls below the count
        ranks = np.argsort(np.argsort(rng.random((n - 1, d)), axis=1), axis=1)
        masked = ranks < counts[:, None]
        Z[1:] = np.where(masked, ref, Z[1:])
    else:
        Z[1:] += spec.jitter_scale * rng.standard_normal((n - 1, d))
    sigma = spec.kernel_width
    if sigma is None:
        sigma = 0.75 * float(np.mean(pdist(Z)))
        if not sigma > 0:
            raise ExplanationError("neighborhood collapsed to a point (x equals the reference); set kernel_width")
    K = np.exp(-np.sum((Z - x) ** 2, axis=1) / sigma**2)
    scores = np.asarray(f.score(Z), dtype=np.float64)
    return Neighborhood(Z, K, scores, sigma)


def fit_surrogate(nb: Neighborhood, sample_ref: int = 0) -> Explanation:
    n, d = nb.points.shape
    sw = np.sqrt(nb.weights)
    A = np.hstack([np.ones((n, 1)), nb.points]) * sw[:, None]
    coef, _, rank, _ = linalg.lstsq(A, nb.scores * sw, lapack_driver="gelsy")
    if rank < d + 1:
        raise ExplanationError(
            f"weighted design has rank {rank} < {d + 1}; increase n_neighbors, widen the kernel, "
            "or drop constant columns"
        )
    return Explanation(coef[1:], coef[0], sample_ref, nb)


def explain(f, x, spec: NeighborhoodSpec, sample_ref: int = 0) -> Explanation:
    """Weighted-least-squares surrogate of ``f`` around ``x``.

    ``sample_ref`` selects the neighborhood substream, so the same
    (spec.seed, sample_ref) always reproduces the same N(x).
    """
    return fit_surrogate(sample_neighborhood(f, x, spec, sample_ref), sample_ref)


def explain_batch(f, X, spec: NeighborhoodSpec, refs=None, threads: int = 1) -> list[Explanation]:
    X = np.asarray(X, dtype=np.float64)
    refs = range(X.shape[0]) if refs is None else refs
    jobs = list(zip(X, refs))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda job: explain(f, job[0], spec, int(job[1])), jobs))
    return [explain(f, x, spec, int(r)) for x, r in jobs]


def explanation_loss(f, x, candidate: Explanation, spec: NeighborhoodSpec) -> float:
    """Weighted squared surrogate error of ``candidate`` over N(x)."""
    if candidate.neighborhood is None:
        nb = sample_neighborhood(f, x, spec, candidate.sample_ref)
        candidate = replace(candidate, neighborhood=nb)
    if candidate.n_features != candidate.neighborhood.points.shape[1]:
        raise ContractError("candidate dimension does not match the neighborhood")
    return candidate.loss()


def sort_map(values: np.ndarray, orientation: str) -> np.ndarray:
    if orientation == GOODWARE_FIRST:
        key = values
    elif orientation == MALWARE_FIRST:
        key = -values
    else:
        raise ConfigurationError(f"orientation must be one of {ORIENTATIONS}")
    # stable sort: equal values keep ascending feature index
    return np.argsort(key, kind="stable")


def aggregate(explanations, orientation: str = GOODWARE_FIRST) -> AggregatedExplanation:
    explanations = list(explanations)
    if not explanations:
        raise ContractError("cannot aggregate an empty list of explanations")
    d = explanations[0].n_features
    if any(e.n_features != d for e in explanations):
        raise ContractError("explanations have mixed dimensions")
    values = np.zeros(d)
    for e in explanations:
        values = values + e.values
    values.setflags(write=False)
    order = sort_map(values, orientation)
    order.setflags(write=False)
    return AggregatedExplanation(values, order, orientation)


def _clipped_logit(p: float) -> tuple[float, bool]:
    q = min(max(p, CLIP), 1.0 - CLIP)
    return float(logit(q)), q != p


def log_odds_score(f, x, expl: Explanation, reference) -> LogOdds:
    """Drop in predicted-class logit after erasing the top 20% supporting features.

    A feature's contribution is w_j (x_j - reference_j), signed toward the
    predicted class; the ceil(0.2 d) largest are set to their reference value.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    d = x.shape[0]
    if expl.n_features != d or ref.shape != (d,):
        raise ContractError("sample, explanation and reference must share d")
    p = float(f.score(x))
    c = int(p >= 0.5)
    contrib = expl.values * (x - ref)
    if c == 0:
        contrib = -contrib
    m = math.ceil(ERASE_FRACTION * d)
    top = np.argsort(-contrib, kind="stable")[:m]
    x_erased = x.copy()
    x_erased[top] = ref[top]
    p_erased = float(f.score(x_erased))
    if c == 0:
        p, p_erased = 1.0 - p, 1.0 - p_erased
    a, clip_a = _clipped_logit(p)
    b, clip_b = _clipped_logit(p_erased)
    return LogOdds(a - b, clip_a or clip_b, c, tuple(int(t) for t in sorted(top)))


def save_explanations_csv(explanations, path, extra_columns=None):
    """One row per sample: sample_ref, d attribution columns, intercept, then ``extra_columns``."""
    explanations = list(explanations)
    d = explanations[0].n_features if explanations else 0
    extra_columns = extra_columns or {}
    rows = sorted(explanations, key=lambda e: e.sample_ref)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id"] + [f"w{j}" for j in range(d)] + ["intercept"] + list(extra_columns))
        for e in rows:
            writer.writerow([e.sample_ref] + [repr(float(v)) for v in e.values] + [repr(e.intercept)]
                            + list(extra_columns.values()))
