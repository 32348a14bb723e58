"""Binary scorers f: R^d -> [0, 1] and bagging subsample training."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels
from .data import Dataset, child_seed, make_rng
from .errors import ConfigurationError, ContractError, TrainingError

FORMAT_VERSION = 1
THRESHOLD = 0.5
KINDS = ("logistic", "stump_ensemble")
# bias used for the constant scorer fitted to a single-class bootstrap draw
_SATURATED_BIAS = 30.0


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "logistic"
    learning_rate: float = 1.0
    n_iter: int = 500
    l2: float = 1e-3
    n_stumps: int = 100
    depth: int = 1
    min_hess: float = 1e-3
    leaf_reg: float = 1.0
    checkpoint_every: int = 25
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 1 <= self.n_iter <= 10**6:
            raise ConfigurationError("n_iter must lie in [1, 10^6]")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be non-negative")
        if not 1 <= self.n_stumps <= 10**6:
            raise ConfigurationError("n_stumps must lie in [1, 10^6]")
        if not 1 <= self.depth <= 8:
            raise ConfigurationError("depth must lie in [1, 8]")
        if self.min_hess < 0 or self.leaf_reg < 0:
            raise ConfigurationError("min_hess and leaf_reg must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")


class Scorer:
    """Common interface: ``score`` maps rows to [0, 1], ``predict`` thresholds at 0.5."""

    kind: str
    n_features: int

    def logit(self, X) -> np.ndarray:
        raise NotImplementedError

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.n_features:
            raise ContractError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        return X2, single

    def score(self, X):
        X2, single = self._check(X)
        s = expit(self.logit(X2))
        return float(s[0]) if single else s

    def predict(self, X):
        s = self.score(X)
        if np.ndim(s) == 0:
            return int(s >= THRESHOLD)
        return (s >= THRESHOLD).astype(np.int64)

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.features) == data.labels))


@dataclass(frozen=True, eq=False)
class LogisticScorer(Scorer):
    weights: np.ndarray
    bias: float
    loss_history: tuple = ()

    kind = "logistic"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def logit(self, X) -> np.ndarray:
        X2, _ = self._check(X)
        return X2 @ self.weights + self.bias


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; a node with feature -1 is a leaf."""

    feature: tuple
    threshold: tuple
    left: tuple
    right: tuple
    value: tuple

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        rows = np.arange(X.shape[0])
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                return np.asarray(self.value)[node]
            go_left = X[rows, np.where(active, f, 0)] <= thr[node]
            node = np.where(active, np.where(go_left, left[node], right[node]), node)


@dataclass(frozen=True, eq=False)
class StumpEnsemble(Scorer):
    trees: tuple
    base: float
    n_features_: int

    kind = "stump_ensemble"

    @property
    def n_features(self) -> int:
        return self.n_features_

    def logit(self, X) -> np.ndarray:
        X2, _ = self._check(X)
        out = np.full(X2.shape[0], self.base)
        for t in self.trees:
            out += t.apply(X2)
        return out


def _logistic_loss(X, y, w, b, l2):
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def _train_logistic(data: Dataset, cfg: TrainConfig) -> LogisticScorer:
    X = data.features
    y = data.labels.astype(np.float64)
    n, d = X.shape
    # gradient of the mean loss is Lipschitz with constant ||[X 1]||^2 / (4n) + l2
    Xa = np.hstack([X, np.ones((n, 1))])
    lip = np.linalg.norm(Xa, 2) ** 2 / (4.0 * n) + cfg.l2
    step = min(cfg.learning_rate, 1.0 / lip)
    w = np.zeros(d)
    b = 0.0
    history = [_logistic_loss(X, y, w, b, cfg.l2)]
    for it in range(1, cfg.n_iter + 1):
        r = expit(X @ w + b) - y
        gw = X.T @ r / n + cfg.l2 * w
        gb = float(np.mean(r))
        w = w - step * gw
        b = b - step * gb
        if it % cfg.checkpoint_every == 0 or it == cfg.n_iter:
            history.append(_logistic_loss(X, y, w, b, cfg.l2))
    return LogisticScorer(w, b, tuple(history))


def _grow(X, order, in_node, grad, hess, depth, cfg, nodes):
    idx = len(nodes["feature"])
    for key in nodes:
        nodes[key].append(-1 if key in ("feature", "left", "right") else 0.0)
    G = float(np.sum(grad[in_node]))
    H = float(np.sum(hess[in_node]))
    leaf = -cfg.learning_rate * G / (H + cfg.leaf_reg)
    if depth == 0:
        nodes["value"][idx] = leaf
        return idx
    feat, thr, gain = kernels.best_split(X, order, in_node, grad, hess, cfg.leaf_reg, cfg.min_hess)
    if feat < 0 or gain <= 0:
        nodes["value"][idx] = leaf
        return idx
    go_left = X[:, feat] <= thr
    nodes["feature"][idx] = int(feat)
    nodes["threshold"][idx] = float(thr)
    nodes["left"][idx] = _grow(X, order, in_node & go_left, grad, hess, depth - 1, cfg, nodes)
    nodes["right"][idx] = _grow(X, order, in_node & ~go_left, grad, hess, depth - 1, cfg, nodes)
    return idx


def _train_stumps(data: Dataset, cfg: TrainConfig) -> StumpEnsemble:
    X = np.ascontiguousarray(data.features)
    y = data.labels.astype(np.float64)
    n, d = X.shape
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    base = math.log(prior / (1 - prior))
    margin = np.full(n, base)
    everyone = np.ones(n, dtype=bool)
    trees = []
    for _ in range(cfg.n_stumps):
        p = expit(margin)
        grad = p - y
        hess = p * (1 - p)
        nodes = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}
        _grow(X, order, everyone, grad, hess, cfg.depth, cfg, nodes)
        tree = Tree(*(tuple(nodes[k]) for k in ("feature", "threshold", "left", "right", "value")))
        trees.append(tree)
        margin = margin + tree.apply(X)
    return StumpEnsemble(tuple(trees), base, d)


def train(data: Dataset, cfg: TrainConfig) -> Scorer:
    """Fit a scorer of kind ``cfg.kind``; deterministic (training itself uses no randomness)."""
    cfg.validate()
    n0, n1 = data.class_counts()
    if n0 == 0 or n1 == 0:
        raise TrainingError("training data must contain both classes")
    if cfg.kind == "logistic":
        return _train_logistic(data, cfg)
    return _train_stumps(data, cfg)


def _constant_scorer(label: int, d: int) -> LogisticScorer:
    return LogisticScorer(np.zeros(d), _SATURATED_BIAS if label == 1 else -_SATURATED_BIAS)


def subsample_train(data: Dataset, subsample_size: int, n_models: int, cfg: TrainConfig,
                    rng: np.random.Generator, threads: int = 1) -> list[Scorer]:
    """Train ``n_models`` scorers, each on its own with-replacement draw of ``subsample_size`` rows.

    Draw m comes from the substream (base, m) where ``base`` is taken from
    ``rng`` once, so the result does not depend on ``threads``. A draw that
    happens to contain a single class yields a constant scorer for that class.
    """
    if n_models < 1:
        raise ConfigurationError("n_models must be >= 1")
    if subsample_size < 1:
        raise ConfigurationError("subsample_size must be >= 1")
    cfg.validate()
    base = child_seed(rng)

    def fit(m):
        idx = make_rng(base, "bag", m).integers(0, data.n_samples, subsample_size)
        part = data.subset(idx)
        n0, n1 = part.class_counts()
        if n0 == 0 or n1 == 0:
            return _constant_scorer(1 if n1 else 0, data.n_features)
        return train(part, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fit, range(n_models)))
    return [fit(m) for m in range(n_models)]


def majority_vote(models: list[Scorer], X) -> np.ndarray:
    votes = np.mean([m.predict(X) for m in models], axis=0)
    return (votes >= 0.5).astype(np.int64)


# serialization -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps(scorer: Scorer, provenance: dict | None = None) -> str:
    """Versioned flat text; ``provenance`` items become trailing ``#`` comment lines."""
    lines = [f"xrandlab-scorer {FORMAT_VERSION}", f"kind {scorer.kind}", f"threshold {_fmt(THRESHOLD)}",
             f"n_features {scorer.n_features}"]
    if isinstance(scorer, LogisticScorer):
        lines.append(f"bias {_fmt(scorer.bias)}")
        lines.append("weights " + " ".join(_fmt(v) for v in scorer.weights))
    elif isinstance(scorer, StumpEnsemble):
        lines.append(f"base {_fmt(scorer.base)}")
        lines.append(f"n_trees {len(scorer.trees)}")
        for t in scorer.trees:
            lines.append(f"tree {len(t.feature)}")
            for node in zip(t.feature, t.threshold, t.left, t.right, t.value):
                f, thr, lft, rgt, val = node
                lines.append(f"{f} {_fmt(thr)} {lft} {rgt} {_fmt(val)}")
    else:
        raise ContractError(f"cannot serialize {type(scorer).__name__}")
    for key in sorted(provenance or {}):
        lines.append(f"# {key} {provenance[key]}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Scorer:
    lines = [line for line in text.splitlines() if line and not line.startswith("#")]
    try:
        tag, version = lines[0].split()
        if tag != "xrandlab-scorer":
            raise ValueError("bad header")
        if int(version) != FORMAT_VERSION:
            raise ContractError(f"unsupported scorer format version {version}")
        fields = dict(line.split(" ", 1) for line in lines[1:4])
        kind = fields["kind"]
        d = int(fields["n_features"])
        if kind == "logistic":
            bias = float(lines[4].split()[1])
            w = np.array([float(v) for v in lines[5].split()[1:]])
            if w.shape != (d,):
                raise ValueError("weight count mismatch")
            return LogisticScorer(w, bias)
        if kind == "stump_ensemble":
            base = float(lines[4].split()[1])
            n_trees = int(lines[5].split()[1])
            pos = 6
            trees = []
            for _ in range(n_trees):
                n_nodes = int(lines[pos].split()[1])
                rows = [lines[pos + 1 + q].split() for q in range(n_nodes)]
                pos += 1 + n_nodes
                trees.append(Tree(tuple(int(r[0]) for r in rows), tuple(float(r[1]) for r in rows),
                                  tuple(int(r[2]) for r in rows), tuple(int(r[3]) for r in rows),
                                  tuple(float(r[4]) for r in rows)))
            return StumpEnsemble(tuple(trees), base, d)
        raise ValueError(f"unknown kind {kind!r}")
    except ContractError:
        raise
    except (ValueError, IndexError, KeyError) as exc:
        raise ContractError(f"malformed scorer file: {exc}") from None


def save(scorer: Scorer, path, provenance: dict | None = None):
    Path(path).write_text(dumps(scorer, provenance), encoding="utf-8", newline="\n")


def load(path) -> Scorer:
    path = Path(path)
    if not path.is_file():
        raise ContractError(f"{path}: no such scorer file")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ContractError(f"{path}: scorer file is not UTF-8 text") from None
    return loads(text)
