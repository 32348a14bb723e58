import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import weighted_loss, wls_normal_equations

from xrandlab import model
from xrandlab.data import SynthSpec, generate_synthetic, make_rng
from xrandlab.errors import ConfigurationError, ContractError, ExplanationError
from xrandlab.explainer import (GOODWARE_FIRST, MALWARE_FIRST, Explanation, NeighborhoodSpec, aggregate, explain,
                                explain_batch, explanation_loss, log_odds_score, sample_neighborhood,
                                save_explanations_csv, sort_map)
from xrandlab.model import LogisticScorer, Scorer


class Linear(Scorer):
    """clip(c . z + b) scorer; unclipped on the neighborhoods used below."""

    kind = "test-linear"

    def __init__(self, coef, bias=0.0):
        self.coef = np.asarray(coef, dtype=float)
        self.bias = bias
        self.n_features = len(self.coef)

    def score(self, X):
        X2, single = self._check(X)
        s = np.clip(X2 @ self.coef + self.bias, 0.0, 1.0)
        return float(s[0]) if single else s


class Constant(Scorer):
    kind = "test-constant"

    def __init__(self, value, d):
        self.value = value
        self.n_features = d

    def score(self, X):
        X2, single = self._check(X)
        s = np.full(X2.shape[0], self.value)
        return float(s[0]) if single else s


@pytest.fixture(scope="module")
def stump_case():
    ds = generate_synthetic(SynthSpec(n_samples=200, n_features=5, n_goodware_informative=2,
                                      n_malware_informative=2), make_rng(11))
    f = model.train(ds, model.TrainConfig(kind="stump_ensemble", n_stumps=8, depth=2))
    spec = NeighborhoodSpec(tuple(ds.features.mean(0)), seed=5)
    return f, ds.features[3], spec


def test_constant_scorer_explanation():
    spec = NeighborhoodSpec((0.0,) * 4, seed=1)
    e = explain(Constant(0.5, 4), np.array([1.0, -1.0, 2.0, 0.5]), spec)
    assert np.max(np.abs(e.values)) <= 1e-8
    assert e.intercept == pytest.approx(0.5, abs=1e-8)


def test_linear_scorer_is_its_own_surrogate():
    f = Linear([0.3, 0.7], bias=0.0)
    spec = NeighborhoodSpec((0.2, 0.1), seed=3)
    e = explain(f, np.array([0.5, 0.6]), spec)
    assert np.allclose(e.values, [0.3, 0.7], atol=1e-6)
    assert explanation_loss(f, None, e, spec) <= 1e-10


def test_stump_ensemble_frozen_against_normal_equations(stump_case):
    # frozen from the 40-digit normal-equations oracle on the same neighborhood
    f, x, spec = stump_case
    e = explain(f, x, spec, 3)
    frozen_b = 0.40755266562647596
    frozen_w = [0.11474967886857243, -0.14283839474331642, 0.024349540467614658,
                0.09682362625288987, -0.0798537023352495]
    assert e.intercept == pytest.approx(frozen_b, abs=1e-12)
    assert np.allclose(e.values, frozen_w, atol=1e-12, rtol=0)
    nb = e.neighborhood
    b, w = wls_normal_equations(nb.points, nb.weights, nb.scores)
    assert np.allclose(w, e.values, atol=1e-12, rtol=0)


def test_loss_frozen_against_oracle(stump_case):
    f, x, spec = stump_case
    e = explain(f, x, spec, 3)
    moved = e.with_values(e.values + np.array([0, 0, 0.25, 0, 0]))
    assert explanation_loss(f, x, moved, spec) == pytest.approx(0.47256750718246776, rel=1e-12)
    nb = e.neighborhood
    assert weighted_loss(nb.points, nb.weights, nb.scores, moved.values, moved.intercept) == pytest.approx(
        explanation_loss(f, x, moved, spec), rel=1e-12)


def test_loss_recomputes_neighborhood_when_missing(stump_case):
    f, x, spec = stump_case
    e = explain(f, x, spec, 3)
    bare = Explanation(e.values, e.intercept, 3)
    assert explanation_loss(f, x, bare, spec) == e.loss()


def test_loss_increases_off_minimizer(stump_case):
    f, x, spec = stump_case
    e = explain(f, x, spec, 3)
    for j in range(5):
        v = e.values.copy()
        v[j] += 1.0
        assert e.with_values(v).loss() > e.loss()


def test_surrogate_first_order_optimality():
    ds = generate_synthetic(SynthSpec(n_samples=300, n_features=20, n_goodware_informative=4,
                                      n_malware_informative=4), make_rng(2))
    f = model.train(ds, model.TrainConfig())
    spec = NeighborhoodSpec(tuple(ds.features.mean(0)), seed=2)
    rng = np.random.default_rng(0)
    for n in range(5):
        e = explain(f, ds.features[n], spec, n)
        base = e.loss()
        for j in rng.choice(20, 20, replace=True):
            for step in (1e-3, -1e-3):
                v = e.values.copy()
                v[j] += step
                assert e.with_values(v).loss() >= base


def test_wide_kernel_matches_unweighted_fit(stump_case):
    f, x, _ = stump_case
    spec = NeighborhoodSpec(stump_case[2].reference, kernel_width=1e6, seed=5)
    e = explain(f, x, spec, 3)
    nb = e.neighborhood
    A = np.hstack([np.ones((nb.points.shape[0], 1)), nb.points])
    coef = np.linalg.lstsq(A, nb.scores, rcond=None)[0]
    assert np.allclose(e.values, coef[1:], atol=1e-6)


def test_rank_deficient_design():
    # a single-coordinate sample that equals the reference leaves masking no variation
    spec = NeighborhoodSpec((0.0, 0.0, 0.0), n_neighbors=8, kernel_width=1.0, seed=0)
    with pytest.raises(ExplanationError, match="n_neighbors"):
        explain(Linear([0.1, 0.1, 0.1], 0.5), np.array([0.0, 0.0, 1.0]), spec)


def test_neighborhood_spec_validation():
    with pytest.raises(ConfigurationError):
        NeighborhoodSpec((0.0, 0.0), n_neighbors=3).validate()
    with pytest.raises(ConfigurationError):
        NeighborhoodSpec((0.0,), kernel_width=0.0).validate()
    with pytest.raises(ConfigurationError):
        NeighborhoodSpec((0.0,), scheme="blur").validate()
    assert NeighborhoodSpec((0.0,) * 7).resolved_neighbors() == 24


def test_neighborhood_reproducible_and_row0_is_x():
    spec = NeighborhoodSpec((0.0,) * 6, seed=4)
    x = np.arange(6.0)
    f = Linear([0.01] * 6, 0.2)
    a = sample_neighborhood(f, x, spec, 7)
    b = sample_neighborhood(f, x, spec, 7)
    c = sample_neighborhood(f, x, spec, 8)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert np.array_equal(a.points[0], x)
    assert a.weights[0] == 1.0
    # masking only ever writes the reference value
    assert np.all((a.points == x) | (a.points == 0.0))


def test_jitter_scheme():
    spec = NeighborhoodSpec((0.0,) * 3, scheme="jitter", jitter_scale=0.1, seed=4)
    e = explain(Linear([0.2, 0.1, 0.3], 0.1), np.array([0.5, 0.5, 0.5]), spec)
    assert np.allclose(e.values, [0.2, 0.1, 0.3], atol=1e-8)


def test_sample_contract():
    spec = NeighborhoodSpec((0.0,) * 3)
    with pytest.raises(ContractError):
        explain(Linear([0.1] * 3), np.zeros(4), spec)
    with pytest.raises(ContractError):
        explain(Linear([0.1] * 3), np.array([np.nan, 0, 0]), spec)


def test_explain_batch_threads_identical(stump_case):
    f, _, spec = stump_case
    X = np.random.default_rng(0).normal(size=(12, 5))
    a = explain_batch(f, X, spec, range(12))
    b = explain_batch(f, X, spec, range(12), threads=4)
    assert all(np.array_equal(p.values, q.values) and p.intercept == q.intercept for p, q in zip(a, b))


def _expl(v):
    return Explanation(np.asarray(v, dtype=float), 0.0)


def test_aggregate_single_identity():
    agg = aggregate([_expl([3.0, -1.0, 2.0])])
    assert agg.values.tolist() == [3.0, -1.0, 2.0]
    assert agg.sort_map.tolist() == [1, 2, 0]


def test_aggregate_cancellation_tiebreak():
    agg = aggregate([_expl([1.0, -2.0, 3.0, 0.5]), _expl([-1.0, 2.0, -3.0, -0.5])])
    assert agg.values.tolist() == [0.0] * 4
    assert agg.sort_map.tolist() == [0, 1, 2, 3]
    assert aggregate([_expl([0.0] * 4)], MALWARE_FIRST).sort_map.tolist() == [0, 1, 2, 3]


def test_aggregate_three_vectors():
    vs = [[0.5, -1.0, 2.0, 0.0], [1.5, 0.25, -3.0, 1.0], [-0.5, -0.25, 0.5, 2.0]]
    agg = aggregate([_expl(v) for v in vs], GOODWARE_FIRST)
    # hand sums: [1.5, -1.0, -0.5, 3.0]
    assert agg.values.tolist() == [1.5, -1.0, -0.5, 3.0]
    assert agg.sort_map.tolist() == [1, 2, 0, 3]
    assert aggregate([_expl(v) for v in vs], MALWARE_FIRST).sort_map.tolist() == [3, 0, 2, 1]


def test_aggregate_errors():
    with pytest.raises(ContractError):
        aggregate([])
    with pytest.raises(ContractError):
        aggregate([_expl([1.0]), _expl([1.0, 2.0])])
    with pytest.raises(ConfigurationError):
        sort_map(np.zeros(3), "sideways")


@given(st.lists(st.lists(st.integers(-20, 20), min_size=4, max_size=4), min_size=2, max_size=8),
       st.sampled_from([GOODWARE_FIRST, MALWARE_FIRST]))
def test_aggregate_properties(rows, orientation):
    ex = [_expl(r) for r in rows]
    cut = len(ex) // 2
    whole = aggregate(ex, orientation)
    parts = aggregate(ex[:cut], orientation).values + aggregate(ex[cut:], orientation).values
    assert np.array_equal(whole.values, parts)
    v = whole.sort_map
    assert sorted(v.tolist()) == [0, 1, 2, 3]
    key = whole.values[v] if orientation == GOODWARE_FIRST else -whole.values[v]
    assert np.all(np.diff(key) >= 0)
    # ties keep ascending index
    for a, b in zip(v[:-1], v[1:]):
        if whole.values[a] == whole.values[b]:
            assert a < b
    assert np.array_equal(whole.rank_of()[v], np.arange(4))


def test_log_odds_constant_scorer_is_zero():
    f = Constant(0.7, 5)
    r = log_odds_score(f, np.ones(5), _expl([1, 2, 3, 4, 5]), np.zeros(5))
    assert r.value == 0.0 and not r.clipped


def test_log_odds_hand_logistic():
    f = LogisticScorer(np.array([2.0, 0, 0, 0, 0]), 0.0)
    x = np.array([1.0, 0, 0, 0, 0])
    r = log_odds_score(f, x, _expl([2.0, 0, 0, 0, 0]), np.zeros(5))
    assert r.value == pytest.approx(2.0, abs=1e-12)
    assert r.erased == (0,)
    assert r.predicted == 1


def test_log_odds_reference_equal_x_is_zero():
    f = LogisticScorer(np.array([2.0, -1.0, 0.5, 0, 3.0]), 0.1)
    x = np.array([1.0, 2.0, -1.0, 0.0, 0.3])
    assert log_odds_score(f, x, _expl([1, 1, 1, 1, 1]), x).value == 0.0


def test_log_odds_goodware_prediction_uses_class_zero():
    f = LogisticScorer(np.array([-2.0, 0, 0, 0, 0]), 0.0)
    x = np.array([1.0, 0, 0, 0, 0])
    r = log_odds_score(f, x, _expl([-2.0, 0, 0, 0, 0]), np.zeros(5))
    assert r.predicted == 0
    assert r.value == pytest.approx(2.0, abs=1e-12)


def test_log_odds_clipping_flagged():
    f = LogisticScorer(np.array([100.0]), 0.0)
    r = log_odds_score(f, np.array([1.0]), _expl([1.0]), np.zeros(1))
    assert r.clipped
    assert r.value == pytest.approx(math.log((1 - 1e-6) / 1e-6), rel=1e-9)


def test_save_explanations_csv(tmp_path):
    rows = [Explanation(np.array([0.1, 0.2]), 0.5, 2), Explanation(np.array([-1.0, 3.0]), 0.0, 1)]
    save_explanations_csv(rows, tmp_path / "e.csv", {"config_hash": "h"})
    text = (tmp_path / "e.csv").read_bytes().decode()
    assert "\r" not in text
    assert text.splitlines() == ["sample_id,w0,w1,intercept,config_hash", "1,-1.0,3.0,0.0,h",
                                 "2,0.1,0.2,0.5,h"]
