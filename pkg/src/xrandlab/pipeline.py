"""End-to-end experiment plumbing shared by the CLI and the acceptance suite.

One ``Scenario`` per seed holds the data split, the clean scorer, the
defender's aggregate and the per-k delta matrices, so sweeps over epsilon,
poison rate and trigger size reuse everything that does not depend on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attack, model
from .data import Dataset, SynthSpec, generate_synthetic, load_csv, make_rng, split
from .errors import ConfigurationError
from .explainer import GOODWARE_FIRST, NeighborhoodSpec, aggregate, explain, explain_batch
from .xrand import Deployment, MechanismConfig, delta_matrix, freeze_plan

# sample_ref offset for attacker queries, keeping their neighborhood substreams
# apart from the defender's
QUERY_REF_OFFSET = 1_000_000
EPSILON_MODES = ("total", "per_feature")


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthSpec = SynthSpec()
    csv_path: str | None = None
    label_column: str = "label"
    train: model.TrainConfig = model.TrainConfig()
    split_fraction: float = 0.7
    n_explain: int = 500
    n_neighbors: int | None = None
    kernel_width: float | None = None
    scheme: str = "mask"
    k: int | None = None
    tau: int = 50
    lam: float = 0.1
    solver_tol: float = 1e-8
    epsilon_mode: str = "total"
    orientation: str = GOODWARE_FIRST
    threads: int = 1

    def validate(self):
        if not 0 < self.split_fraction < 1:
            raise ConfigurationError("split_fraction must lie strictly between 0 and 1")
        if self.n_explain < 0:
            raise ConfigurationError("n_explain must be >= 0 (0 means the whole training split)")
        if self.epsilon_mode not in EPSILON_MODES:
            raise ConfigurationError(f"epsilon_mode must be one of {EPSILON_MODES}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        self.train.validate()

    def mechanism(self, epsilon: float, k: int, seed: int) -> MechanismConfig:
        k = self.k if self.k is not None else k
        eps = epsilon / k if self.epsilon_mode == "total" else epsilon
        return MechanismConfig(k=k, tau=self.tau, epsilon=eps, lam=self.lam, tol=self.solver_tol,
                               orientation=self.orientation, seed=seed)


@dataclass
class Scenario:
    cfg: PipelineConfig
    seed: int
    data: Dataset
    train: Dataset
    test: Dataset
    attacker: Dataset
    clean: model.Scorer
    spec: NeighborhoodSpec
    defender_rows: np.ndarray
    agg: object
    _delta: dict = field(default_factory=dict)
    _attacker_base: np.ndarray | None = None

    @property
    def defender_X(self) -> np.ndarray:
        return self.train.features[self.defender_rows]

    def delta(self, k: int, tau: int) -> np.ndarray:
        key = (k, tau)
        if key not in self._delta:
            self._delta[key] = delta_matrix(self.clean, self.defender_X, self.agg.sort_map, k, tau, self.spec,
                                            refs=self.defender_rows, threads=self.cfg.threads)
        return self._delta[key]

    def deployment(self, mech: MechanismConfig) -> Deployment:
        """Freeze a flip plan for ``mech``; cyclic constraint sets are re-drawn."""
        mech.validate(self.train.n_features)
        return freeze_plan(self.clean, self.defender_X, self.agg, mech, self.spec, self.delta(mech.k, mech.tau))

    def query_api(self, deployment: Deployment | None):
        """The service the attacker talks to: raw explanations, or XRand-corrected ones."""
        def api(X):
            X = np.atleast_2d(X)
            refs = QUERY_REF_OFFSET + np.arange(X.shape[0])
            if deployment is None:
                preds = self.clean.predict(X)
                expl = explain_batch(self.clean, X, self.spec, refs, self.cfg.threads)
                return list(zip((int(p) for p in preds), expl))
            return deployment.query(X, refs, self.cfg.threads)
        return api

    def attacker_aggregate(self, deployment: Deployment | None) -> np.ndarray:
        if deployment is None or not deployment.plan.flip_set:
            if self._attacker_base is None:
                self._attacker_base = attack.attacker_aggregate(self.query_api(None), self.attacker)
            return self._attacker_base
        return attack.attacker_aggregate(self.query_api(deployment), self.attacker)


def load_data(cfg: PipelineConfig, seed: int) -> Dataset:
    if cfg.csv_path:
        return load_csv(cfg.csv_path, cfg.label_column)
    return generate_synthetic(cfg.synth, make_rng(seed, "data"))


def prepare(cfg: PipelineConfig, seed: int, scorer: model.Scorer | None = None, explain: bool = True) -> Scenario:
    """Data, split and clean scorer for ``seed``; ``scorer`` replaces training when given.

    With ``explain=False`` the defender's aggregate is left as None.
    """
    cfg.validate()
    data = load_data(cfg, seed)
    train_part, test_part = split(data, cfg.split_fraction, make_rng(seed, "split"))
    if scorer is not None and scorer.n_features != train_part.n_features:
        raise ConfigurationError(f"scorer expects d={scorer.n_features} but the data has d={train_part.n_features}")
    clean = model.train(train_part, cfg.train) if scorer is None else scorer
    reference = tuple(np.mean(train_part.features, axis=0))
    spec = NeighborhoodSpec(reference, cfg.n_neighbors, cfg.kernel_width, cfg.scheme, seed=seed)
    n = train_part.n_samples
    if cfg.n_explain == 0 or cfg.n_explain >= n:
        rows = np.arange(n)
    else:
        rows = np.sort(make_rng(seed, "defender-sample").choice(n, cfg.n_explain, replace=False))
    agg = None
    if explain:
        agg = aggregate(explain_batch(clean, train_part.features[rows], spec, rows, cfg.threads), cfg.orientation)
    return Scenario(cfg, seed, data, train_part, test_part, test_part, clean, spec, rows, agg)


def run_xba(scn: Scenario, epsilon: float | None, poison_rate: float, trigger_size: int) -> attack.AttackReport:
    """One attack: query (defended at ``epsilon`` or undefended), craft, poison, retrain, evaluate."""
    dep = None
    if epsilon is not None:
        dep = scn.deployment(scn.cfg.mechanism(epsilon, trigger_size, scn.seed))
    w_A = scn.attacker_aggregate(dep)
    trig = attack.craft_trigger(None, scn.attacker, trigger_size, make_rng(scn.seed, "trigger"), aggregate_values=w_A)
    poisoned = attack.poison(scn.train, trig, poison_rate, make_rng(scn.seed, "poison"))
    backdoored = model.train(poisoned, scn.cfg.train)
    return attack.evaluate_attack(scn.clean, backdoored, scn.test, trig, poison_rate)


def log_odds_pair(scn: Scenario, dep: Deployment, n_samples: int):
    """(original, xrand) log-odds for the first ``n_samples`` test rows."""
    X = scn.test.features[:n_samples]
    ref = np.asarray(scn.spec.reference)
    out = []
    from .explainer import log_odds_score
    from .xrand import correct_sample

    for t, x in enumerate(X):
        e = explain(scn.clean, x, scn.spec, QUERY_REF_OFFSET + t)
        c = correct_sample(scn.clean, x, e, dep.constraints, dep.cfg, scn.spec)
        out.append((t, log_odds_score(scn.clean, x, e, ref), log_odds_score(scn.clean, x, c, ref)))
    return out
