"""Explanation-guided backdoor attack harness.

The attacker only sees a query interface returning (prediction,
explanation) pairs, sums the explanations of its own samples, picks the most
goodware-oriented features as the trigger and poisons the outsourced
training data with trigger-stamped goodware.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .data import GOODWARE, MALWARE, Dataset, merge
from .errors import AttackError, ConfigurationError, ContractError


@dataclass(frozen=True)
class TriggerSpec:
    feature_indices: tuple
    values: tuple
    target_label: int = GOODWARE

    def __post_init__(self):
        idx = tuple(int(i) for i in self.feature_indices)
        vals = tuple(float(v) for v in self.values)
        if len(set(idx)) != len(idx):
            raise ContractError("trigger feature indices must be distinct")
        if len(idx) != len(vals):
            raise ContractError("trigger needs one value per feature")
        object.__setattr__(self, "feature_indices", idx)
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return len(self.feature_indices)

    def stamp(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        out[..., list(self.feature_indices)] = self.values
        return out

    def check_pool(self, data: Dataset):
        for j, v in zip(self.feature_indices, self.values):
            pool = data.value_pool[j]
            pos = np.searchsorted(pool, v)
            if pos >= len(pool) or pool[pos] != v:
                raise AttackError(f"trigger value {v!r} for feature {j} does not occur in the dataset")


@dataclass(frozen=True)
class AttackReport:
    attack_success_rate: float
    poison_rate: float | None
    trigger_size: int
    clean_accuracy_before: float
    clean_accuracy_after: float
    n_eligible: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def attacker_aggregate(query_api, attacker_data: Dataset) -> np.ndarray:
    responses = query_api(attacker_data.features)
    if len(responses) != attacker_data.n_samples:
        raise ContractError("query interface returned the wrong number of responses")
    w = np.zeros(attacker_data.n_features)
    for _, expl in responses:
        w = w + np.asarray(expl.values)
    return w


def modal_value(column: np.ndarray, rng: np.random.Generator) -> float:
    values, counts = np.unique(column, return_counts=True)
    tied = values[counts == counts.max()]
    return float(tied[0] if len(tied) == 1 else tied[rng.integers(len(tied))])


def craft_trigger(query_api, attacker_data: Dataset, trigger_size: int, rng: np.random.Generator,
                  aggregate_values=None) -> TriggerSpec:
    """Greedy trigger: the ``trigger_size`` most negative entries of the attacker's aggregate.

    Each selected feature takes its most frequent value among the attacker's
    goodware rows (ties broken by ``rng``). ``aggregate_values`` skips the
    queries when the aggregate is already known.
    """
    d = attacker_data.n_features
    if not 1 <= trigger_size <= d:
        raise ConfigurationError(f"trigger_size must lie in [1, {d}], got {trigger_size}")
    w = attacker_aggregate(query_api, attacker_data) if aggregate_values is None else np.asarray(aggregate_values)
    idx = np.argsort(w, kind="stable")[:trigger_size]
    good = attacker_data.features[attacker_data.labels == GOODWARE]
    if good.shape[0] == 0:
        raise AttackError("attacker data contains no goodware rows to take trigger values from")
    values = [modal_value(good[:, j], rng) for j in idx]
    return TriggerSpec(tuple(int(j) for j in idx), tuple(values))


def poison_count(poison_rate: float, n: int) -> int:
    # exact decimal reading of the rate, so 0.07 * 100 is 7 and not 8
    return math.ceil(Fraction(repr(float(poison_rate))) * n)


def poison(data: Dataset, trigger: TriggerSpec, poison_rate: float, rng: np.random.Generator) -> Dataset:
    """Append ceil(rate * N) trigger-stamped clones of goodware rows (label kept 0)."""
    if not 0 < poison_rate < 1:
        raise ConfigurationError(f"poison_rate must lie strictly between 0 and 1, got {poison_rate}")
    trigger.check_pool(data)
    good = np.flatnonzero(data.labels == GOODWARE)
    if good.size == 0:
        raise AttackError("no goodware rows to clone")
    count = poison_count(poison_rate, data.n_samples)
    src = rng.choice(good, size=count, replace=count > good.size)
    rows = trigger.stamp(data.features[src])
    extra = Dataset(rows, np.full(count, GOODWARE), data.feature_names)
    return merge(data, extra)


def evaluate_attack(clean, backdoored, test: Dataset, trigger: TriggerSpec,
                    poison_rate: float | None = None) -> AttackReport:
    """ASR over malware rows the clean model gets right, after stamping the trigger."""
    if clean.n_features != backdoored.n_features or clean.n_features != test.n_features:
        raise ContractError("scorers and test data must share d")
    eligible = (test.labels == MALWARE) & (clean.predict(test.features) == MALWARE)
    n_eligible = int(eligible.sum())
    if n_eligible == 0:
        raise AttackError("no eligible malware rows (correctly classified by the clean model)")
    stamped = trigger.stamp(test.features[eligible])
    asr = float(np.mean(backdoored.predict(stamped) == GOODWARE))
    return AttackReport(asr, poison_rate, trigger.size, clean.accuracy(test), backdoored.accuracy(test), n_eligible)
