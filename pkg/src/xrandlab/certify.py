"""Certified robustness: bagging poisoning size, PixelDP radius, boosting-RS radius."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from . import kernels
from .errors import ConfigurationError, ContractError

MU_GRID_START = 1e-3
MU_GRID_STOP = 10.0
MU_GRID_RATIO = 1.1
TIE_TOL = 1e-9


def clopper_pearson(successes: int, trials: int, confidence: float) -> tuple[float, float]:
    """Two-sided exact binomial interval at ``confidence``."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ContractError("need 0 <= successes <= trials and trials >= 1")
    if not 0 < confidence < 1:
        raise ConfigurationError("confidence must lie in (0, 1)")
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(beta_dist.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta_dist.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


# bagging ---------------------------------------------------------------------

@dataclass(frozen=True)
class LabelBounds:
    label: int | None
    p_lower: float
    p_upper_other: float
    votes: int
    n_models: int

    @property
    def abstain(self) -> bool:
        return self.label is None or self.p_lower < self.p_upper_other


def label_prob_bounds(models, x, confidence: float = 0.99, min_models: int = 30) -> LabelBounds:
    """Majority label and simultaneous bounds on its vote probability.

    The lower bound is the Clopper-Pearson endpoint at the two-class
    Bonferroni level; in the binary case the other label's upper bound is
    1 - p_lower.
    """
    n = len(models)
    if n < min_models:
        raise ConfigurationError(f"need at least {min_models} models, got {n}")
    votes = int(sum(m.predict(x) for m in models))
    if 2 * votes == n:
        lo = clopper_pearson(votes, n, confidence)[0]
        return LabelBounds(None, lo, 1.0 - lo, votes, n)
    label = int(2 * votes > n)
    count = votes if label == 1 else n - votes
    lo = clopper_pearson(count, n, confidence)[0]
    return LabelBounds(label, lo, 1.0 - lo, votes, n)


def discretization_terms(p_lower: float, p_upper_other: float, n_data: int, s: int) -> tuple[float, float]:
    """sigma_l = p_l - floor(p_l n^s)/n^s and sigma_notl = ceil(p_notl n^s)/n^s - p_notl, exactly."""
    scale = n_data**s
    pl = Fraction(p_lower)
    pu = Fraction(p_upper_other)
    sig_l = pl - Fraction(math.floor(pl * scale), scale)
    sig_u = Fraction(math.ceil(pu * scale), scale) - pu
    return float(sig_l), float(sig_u)


@dataclass(frozen=True)
class BaggingCertInput:
    n_data: int
    subsample_size: int
    n_trials: int
    confidence: float
    p_lower: float
    p_upper_other: float
    sigma_l: float | None = None
    sigma_other: float | None = None

    def __post_init__(self):
        if self.sigma_l is None or self.sigma_other is None:
            sl, so = discretization_terms(self.p_lower, self.p_upper_other, self.n_data, self.subsample_size)
            object.__setattr__(self, "sigma_l", sl)
            object.__setattr__(self, "sigma_other", so)

    @classmethod
    def from_bounds(cls, bounds: LabelBounds, n_data: int, subsample_size: int, confidence: float):
        return cls(n_data, subsample_size, bounds.n_models, confidence, bounds.p_lower, bounds.p_upper_other)

    @property
    def gap(self) -> float:
        return self.p_lower - self.p_upper_other - self.sigma_l - self.sigma_other

    def validate(self):
        if self.n_data < 1 or self.subsample_size < 1:
            raise ConfigurationError("n_data and subsample_size must be >= 1")
        bound = float(Fraction(1, self.n_data**self.subsample_size))
        for name, v in (("sigma_l", self.sigma_l), ("sigma_other", self.sigma_other)):
            if not 0 <= v <= bound:
                raise ContractError(f"{name} = {v} outside [0, n^-s]")


@dataclass(frozen=True)
class SizeCertificate:
    r: int
    closed_form: int
    gap: float

    @property
    def agrees(self) -> bool:
        return self.r == self.closed_form


def size_condition(n: int, r: int, s: int, gap: float) -> float:
    """Left side of the certificate condition; the radius ``r`` is certified when it is negative."""
    return kernels.size_condition(int(n), int(r), float(s), float(gap))


def _exact_condition(n: int, r: int, s: int, gap: float) -> Fraction:
    gap = Fraction(gap)
    best = max(Fraction(m, n) ** s - 2 * Fraction(max(n, m) - r, n) ** s for m in range(max(n - r, 0), n + r + 1))
    return best + 1 - gap


def closed_form_size(n: int, s: int, gap: float) -> int:
    return max(0, math.ceil(n * (1.0 + gap) ** (1.0 / s) - 1.0))


def certified_size_search(inp: BaggingCertInput) -> SizeCertificate:
    """Largest r satisfying the condition (exact search), with the closed form alongside."""
    inp.validate()
    gap = inp.gap
    if not gap > 0:
        return SizeCertificate(0, 0, gap)
    n, sub = inp.n_data, inp.subsample_size
    r = int(kernels.certified_size(n, float(sub), gap))
    # the float search can misjudge a radius whose condition is within
    # rounding of zero; those boundary radii are re-decided in exact arithmetic
    if abs(size_condition(n, r + 1, sub, gap)) < TIE_TOL:
        while _exact_condition(n, r + 1, sub, gap) < 0:
            r += 1
    if r > 0 and abs(size_condition(n, r, sub, gap)) < TIE_TOL:
        while r > 0 and not _exact_condition(n, r, sub, gap) < 0:
            r -= 1
    return SizeCertificate(r, closed_form_size(inp.n_data, inp.subsample_size, gap), gap)


@dataclass(frozen=True)
class PoisoningCertificate:
    r: int
    raw: int

    @property
    def negative(self) -> bool:
        return self.raw < 0


def certified_poisoning_size(rD_star: int, rDprime_star: int) -> PoisoningCertificate:
    raw = int(rD_star) - int(rDprime_star)
    return PoisoningCertificate(max(raw, 0), raw)


def explanation_sensitivity(originals, corrected) -> float:
    """Mean L1 change per explanation, divided by d."""
    A = _as_matrix(originals)
    B = _as_matrix(corrected)
    if A.shape != B.shape or A.shape[0] < 1:
        raise ContractError("originals and corrected must be non-empty and equally shaped")
    n, d = A.shape
    return float(np.sum(np.abs(A - B)) / (n * d))


def _as_matrix(items) -> np.ndarray:
    rows = [np.asarray(getattr(e, "values", e), dtype=np.float64) for e in items]
    if not rows:
        return np.zeros((0, 0))
    if len({r.shape for r in rows}) != 1:
        raise ContractError("explanations have mixed dimensions")
    return np.vstack(rows)


# PixelDP ---------------------------------------------------------------------

@dataclass(frozen=True)
class PixelDpCertInput:
    sensitivity: float
    epsilon: float
    delta: float = 0.0
    noise: str = "laplace"
    n_mc: int = 1000
    confidence: float = 0.95

    def validate(self):
        if not self.sensitivity >= 0:
            raise ConfigurationError("sensitivity must be non-negative")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.noise not in ("laplace", "gaussian"):
            raise ConfigurationError("noise must be 'laplace' or 'gaussian'")
        if (self.noise == "laplace") != (self.delta == 0):
            raise ConfigurationError("delta must be 0 for Laplace noise and in (0, 1) for Gaussian noise")
        if self.noise == "gaussian" and not 0 < self.delta < 1:
            raise ConfigurationError("Gaussian noise needs delta in (0, 1)")
        if self.n_mc < 100:
            raise ConfigurationError("n_mc must be >= 100")
        if not 0 < self.confidence < 1:
            raise ConfigurationError("confidence must lie in (0, 1)")


def noise_scale(inp: PixelDpCertInput, mu: float) -> float:
    """Laplace scale sens*mu/eps, or Gaussian deviation sens*mu*sqrt(2 ln(1.25/delta))/eps."""
    base = inp.sensitivity * mu / inp.epsilon
    if inp.noise == "laplace":
        return base
    return base * math.sqrt(2.0 * math.log(1.25 / inp.delta))


def mu_grid() -> np.ndarray:
    n = int(math.floor(math.log(MU_GRID_STOP / MU_GRID_START) / math.log(MU_GRID_RATIO) + 1e-9)) + 1
    return MU_GRID_START * MU_GRID_RATIO ** np.arange(n)


def hoeffding_radius(n: int, confidence: float) -> float:
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


def robustness_check(lb: float, ub: float, epsilon: float, delta: float) -> bool:
    return lb > math.exp(2.0 * epsilon) * ub + (1.0 + math.exp(epsilon)) * delta


@dataclass(frozen=True)
class PixelDpResult:
    mu_max: float
    label: int
    passes: tuple
    downward_closed: bool


def pixeldp_certify(f, x, inp: PixelDpCertInput, rng: np.random.Generator, grid=None) -> PixelDpResult:
    """Largest grid radius mu whose noisy expected scores pass the robustness check.

    The same standardized noise draws are rescaled for every mu, so the pass
    pattern is comparable across the grid. mu_max is the end of the longest
    passing prefix; ``downward_closed`` records whether every pass lies in it.
    """
    inp.validate()
    x = np.asarray(x, dtype=np.float64)
    grid = mu_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    label = int(f.predict(x))
    if inp.noise == "laplace":
        base = rng.laplace(size=(inp.n_mc, x.shape[0]))
    else:
        base = rng.standard_normal((inp.n_mc, x.shape[0]))
    rad = hoeffding_radius(inp.n_mc, inp.confidence)
    passes = []
    for mu in grid:
        s = np.asarray(f.score(x + noise_scale(inp, float(mu)) * base))
        f_l = s if label == 1 else 1.0 - s
        lb = float(np.mean(f_l)) - rad
        ub = float(np.mean(1.0 - f_l)) + rad
        passes.append(robustness_check(lb, ub, inp.epsilon, inp.delta))
    prefix = 0
    while prefix < len(passes) and passes[prefix]:
        prefix += 1
    mu_max = float(grid[prefix - 1]) if prefix else 0.0
    return PixelDpResult(mu_max, label, tuple(passes), not any(passes[prefix:]))


# boosting randomized smoothing ------------------------------------------------

@dataclass(frozen=True)
class BoostRsCertInput:
    sigma: float
    extra_ratio: float = 0.25
    n_draws: int = 1000
    confidence: float = 0.99

    @property
    def sigma_total(self) -> float:
        """Deviation of the combined perturbation alpha + alpha_1."""
        return math.hypot(self.sigma, self.extra_ratio * self.sigma)

    def validate(self):
        if not self.sigma > 0 or self.extra_ratio < 0:
            raise ConfigurationError("sigma must be positive and extra_ratio non-negative")
        if self.n_draws < 1 or not 0 < self.confidence < 1:
            raise ConfigurationError("n_draws must be >= 1 and confidence in (0, 1)")


@dataclass(frozen=True)
class BoostRsResult:
    radius: float
    label: int
    c_l: float
    c_other: float
    var_new: float
    p_cheb: float
    n1: int
    n_draws: int
    p_lower: float


def chebyshev_bound(var_new: float, c_l: float, c_other: float) -> float:
    """1 - var/(c_l - c_notl)^2 clipped to [0, 1]; 0 when the margin gap is not positive."""
    gap = c_l - c_other
    if not gap > 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - var_new / gap**2)))


def certified_radius(p_lower: float, sigma: float) -> float:
    if not p_lower > 0.5:
        return 0.0
    return float(sigma * norm.ppf(p_lower))


def boost_rs_certify(models, x, inp: BoostRsCertInput, rng: np.random.Generator) -> BoostRsResult:
    """Radius sigma * Phi^-1(p1_lower) for the averaged ensemble.

    p1_lower is the smaller of the Chebyshev bound on the ensemble margin and
    the Clopper-Pearson lower bound on the observed hit frequency.
    """
    inp.validate()
    M = len(models)
    if M < 2:
        raise ConfigurationError("boosting-RS needs an ensemble of at least 2 models")
    x = np.asarray(x, dtype=np.float64)
    ens = float(np.mean([m.score(x) for m in models]))
    label = int(ens >= 0.5)
    Xn = x + inp.sigma_total * rng.standard_normal((inp.n_draws, x.shape[0]))
    S = np.vstack([m.score(Xn) for m in models])
    f_l = S if label == 1 else 1.0 - S
    c_l = float(np.mean(f_l))
    c_other = 1.0 - c_l
    # the averaged ensemble's margin variance: per-draw spread across models over M
    # (shifted by the first model so identical models give exactly zero)
    var_new = float(np.mean(np.var(2.0 * (f_l - f_l[:1]), axis=0))) / M
    p_cheb = chebyshev_bound(var_new, c_l, c_other)
    n1 = int(np.sum((np.mean(S, axis=0) >= 0.5).astype(np.int64) == label))
    p_cp = clopper_pearson(n1, inp.n_draws, inp.confidence)[0]
    p_lower = min(p_cheb, p_cp)
    return BoostRsResult(certified_radius(p_lower, inp.sigma_total), label, c_l, c_other, var_new,
                         p_cheb, n1, inp.n_draws, p_lower)


def certified_accuracy(results, threshold: float) -> float:
    results = list(results)
    if not results:
        raise ContractError("certified accuracy needs at least one result")
    hits = sum(1 for correct, cert in results if correct and cert > threshold)
    return hits / len(results)


def certified_accuracy_curve(results, thresholds) -> list[tuple[float, float]]:
    results = list(results)
    return [(float(t), certified_accuracy(results, t)) for t in sorted(thresholds)]
