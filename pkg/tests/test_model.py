import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xrandlab import model
from xrandlab.data import Dataset, SynthSpec, generate_synthetic, make_rng, split
from xrandlab.errors import ConfigurationError, ContractError, TrainingError
from xrandlab.model import LogisticScorer, StumpEnsemble, TrainConfig


@pytest.fixture(scope="module")
def bench():
    ds = generate_synthetic(SynthSpec(), make_rng(1, "data"))
    return split(ds, 0.7, make_rng(1, "split"))


@pytest.fixture(scope="module")
def small():
    ds = generate_synthetic(SynthSpec(n_samples=300, n_features=8, n_goodware_informative=2,
                                      n_malware_informative=2), make_rng(4))
    return ds


def test_separable_two_features():
    X = np.array([[0, 0], [0, 1], [1, 0], [3, 3], [3, 4], [4, 3]], dtype=float)
    y = [0, 0, 0, 1, 1, 1]
    ds = Dataset(X, y, ["a", "b"])
    f = model.train(ds, TrainConfig(n_iter=1000))
    assert f.accuracy(ds) == 1.0
    g = model.train(ds, TrainConfig(kind="stump_ensemble", n_stumps=20))
    assert g.accuracy(ds) == 1.0


def test_chance_level_without_signal():
    ds = generate_synthetic(SynthSpec(signal_strength=0.0), make_rng(1))
    tr, te = split(ds, 0.7, make_rng(2))
    acc = model.train(tr, TrainConfig()).accuracy(te)
    assert 0.4 <= acc <= 0.6


def test_benchmark_accuracy_regression(bench):
    tr, te = bench
    assert model.train(tr, TrainConfig()).accuracy(te) == pytest.approx(0.9933333333333333, abs=1e-12)


def test_single_class_is_training_error():
    ds = Dataset([[1.0], [2.0]], [1, 1], ["a"])
    with pytest.raises(TrainingError):
        model.train(ds, TrainConfig())


@pytest.mark.parametrize("kwargs", [{"kind": "forest"}, {"learning_rate": 0}, {"n_iter": 0},
                                    {"n_iter": 10**6 + 1}, {"l2": -1}, {"n_stumps": 0}, {"depth": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs).validate()


def test_logistic_loss_non_increasing(small):
    f = model.train(small, TrainConfig(n_iter=400, checkpoint_every=10))
    h = np.array(f.loss_history)
    assert len(h) == 41
    assert np.all(np.diff(h) <= 1e-15)


def test_training_is_deterministic(small):
    a = model.train(small, TrainConfig(kind="stump_ensemble", n_stumps=15, depth=2))
    b = model.train(small, TrainConfig(kind="stump_ensemble", n_stumps=15, depth=2))
    assert model.dumps(a) == model.dumps(b)


def test_score_range_and_predict(small):
    for cfg in (TrainConfig(), TrainConfig(kind="stump_ensemble", n_stumps=10)):
        f = model.train(small, cfg)
        s = f.score(small.features)
        assert np.all((s >= 0) & (s <= 1))
        assert np.array_equal(f.predict(small.features), (s >= 0.5).astype(int))
        assert isinstance(f.score(small.features[0]), float)


def test_score_shape_contract(small):
    f = model.train(small, TrainConfig(n_iter=5))
    with pytest.raises(ContractError):
        f.score(np.zeros(3))


def test_monotone_score_link(small):
    f = model.train(small, TrainConfig())
    rng = np.random.default_rng(0)
    pos = np.flatnonzero(f.weights > 0)
    assert pos.size
    for _ in range(100):
        x = rng.normal(size=small.n_features) * 3
        j = rng.choice(pos)
        x2 = x.copy()
        x2[j] += 1e-3
        assert f.score(x2) >= f.score(x)


def test_label_flip_symmetry(small):
    f = model.train(small, TrainConfig())
    g = model.train(small.with_labels(1 - small.labels), TrainConfig())
    X = np.random.default_rng(1).normal(size=(200, small.n_features)) * 2
    assert np.max(np.abs(g.score(X) - (1 - f.score(X)))) <= 1e-6


def test_subsample_train_determinism_and_threads(small):
    cfg = TrainConfig(n_iter=50)
    a = model.subsample_train(small, 40, 3, cfg, make_rng(5))
    b = model.subsample_train(small, 40, 3, cfg, make_rng(5))
    c = model.subsample_train(small, 40, 3, cfg, make_rng(5), threads=3)
    assert [model.dumps(m) for m in a] == [model.dumps(m) for m in b] == [model.dumps(m) for m in c]
    assert len({model.dumps(m) for m in a}) == 3


def test_subsample_single_model_is_bootstrap(small):
    # same substream as the implementation documents: base from rng, then (base, "bag", 0)
    cfg = TrainConfig(n_iter=60)
    rng = make_rng(9)
    base = int(make_rng(9).integers(0, 2**63 - 1))
    [f] = model.subsample_train(small, small.n_samples, 1, cfg, rng)
    idx = make_rng(base, "bag", 0).integers(0, small.n_samples, small.n_samples)
    ref = model.train(small.subset(idx), cfg)
    assert model.dumps(f) == model.dumps(ref)


def test_subsample_errors(small):
    with pytest.raises(ConfigurationError):
        model.subsample_train(small, 10, 0, TrainConfig(), make_rng(0))
    with pytest.raises(ConfigurationError):
        model.subsample_train(small, 0, 2, TrainConfig(), make_rng(0))


def test_subsample_single_class_draw_is_constant():
    ds = Dataset(np.arange(40.0)[:, None], [0] * 39 + [1], ["a"])
    models = model.subsample_train(ds, 2, 30, TrainConfig(n_iter=5), make_rng(0))
    consts = [m for m in models if isinstance(m, LogisticScorer) and m.weights[0] == 0 and abs(m.bias) == 30]
    assert consts
    for m in consts:
        assert m.predict(np.array([5.0])) == int(m.bias > 0)


def test_majority_vote_regression(bench):
    # frozen from one run: 200 models on 50-row subsamples vs the first single model
    tr, te = bench
    models = model.subsample_train(tr, 50, 200, TrainConfig(), make_rng(1, "bagging"))
    vote = float(np.mean(model.majority_vote(models, te.features) == te.labels))
    single = models[0].accuracy(te)
    assert vote == pytest.approx(0.995, abs=1e-12)
    assert single == pytest.approx(0.9866666666666667, abs=1e-12)
    assert abs(vote - single) <= 0.03


def test_serialization_round_trip(small, tmp_path):
    for cfg in (TrainConfig(), TrainConfig(kind="stump_ensemble", n_stumps=12, depth=3)):
        f = model.train(small, cfg)
        path = tmp_path / f"{cfg.kind}.txt"
        model.save(f, path, {"seed": 3, "config_hash": "abc"})
        g = model.load(path)
        assert type(g) is type(f)
        assert np.array_equal(f.score(small.features), g.score(small.features))
        assert model.dumps(g) + "# config_hash abc\n# seed 3\n" == path.read_text()


@pytest.mark.parametrize("text", ["", "xrandlab-scorer 1\nkind logistic\n", "hello 1\n",
                                  "xrandlab-scorer 1\nkind logistic\nthreshold 0.5\nn_features 2\nbias 0\nweights 1\n",
                                  "xrandlab-scorer 1\nkind tree\nthreshold 0.5\nn_features 1\n"])
def test_loads_malformed(text):
    with pytest.raises(ContractError):
        model.loads(text)


def test_loads_unknown_version():
    with pytest.raises(ContractError, match="version"):
        model.loads("xrandlab-scorer 9\n")


def test_load_binary_garbage(tmp_path):
    p = tmp_path / "s.txt"
    p.write_bytes(b"\xff\xfe\x00garbage")
    with pytest.raises(ContractError):
        model.load(p)


@given(w=st.lists(st.floats(-50, 50), min_size=1, max_size=6), b=st.floats(-50, 50))
def test_logistic_dumps_exact(w, b):
    f = LogisticScorer(np.array(w), b)
    g = model.loads(model.dumps(f))
    assert np.array_equal(f.weights, g.weights) and f.bias == g.bias


def test_stump_tree_apply_matches_manual():
    t = model.Tree(feature=(0, -1, -1), threshold=(0.5, 0.0, 0.0), left=(1, -1, -1), right=(2, -1, -1),
                   value=(0.0, -1.0, 2.0))
    f = StumpEnsemble((t,), 0.25, 2)
    X = np.array([[0.0, 9.0], [0.5, 0.0], [0.6, 0.0]])
    assert f.logit(X).tolist() == [-0.75, -0.75, 2.25]
