import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.estimator_checks import check_estimator

from nodebias.data import SynthConfig, synth_longtail, synth_train_test
from nodebias.errors import ConfigError, TrainingDivergedError
from nodebias.model import dumps_model
from nodebias.train import (
    ReluNetClassifier,
    TrainConfig,
    _fit_params,
    he_uniform_init,
    loss_and_grad,
    train_one,
    train_runs,
)


def separable(seed):
    return synth_longtail(SynthConfig(n_features=2, class_gap=10.0, seed=seed))


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def numeric_grad(params, X, y, h=1e-5):
    out = []
    for W, b in params:
        grads = []
        for arr in (W, b):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_and_grad(params, X, y)[0]
                arr[idx] = old - h
                down = loss_and_grad(params, X, y)[0]
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
            grads.append(g)
        out.append(tuple(grads))
    return out


def gradient_errors(seed):
    rng = np.random.default_rng(seed)
    params = [(rng.normal(size=(4, 3)), rng.normal(size=4)), (rng.normal(size=(2, 4)), rng.normal(size=2))]
    X = rng.normal(size=(8, 3))
    y = rng.integers(0, 2, size=8)
    _, analytic = loss_and_grad(params, X, y)
    numeric = numeric_grad(params, X, y)
    return [rel_err(a, n) for pa, pn in zip(analytic, numeric) for a, n in zip(pa, pn)]


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    assert max(gradient_errors(seed)) <= 1e-4


def test_separable_reaches_full_accuracy():
    for s in range(10):
        net = train_one(separable(s), TrainConfig(hidden_width=10, seed=s, epochs=2000))
        assert net.meta["train_accuracy"] == "1.0"


def test_zero_learning_rate_keeps_init():
    ds = synth_longtail(SynthConfig(class_gap=0.5))
    params, _ = _fit_params(ds.X, ds.y, 2, TrainConfig(learning_rate=0.0, epochs=50, seed=3))
    init = he_uniform_init(5, 10, 2, 3)
    for (W, b), (W0, b0) in zip(params, init):
        assert W.tobytes() == W0.tobytes() and b.tobytes() == b0.tobytes()


def test_training_is_byte_identical():
    ds = synth_longtail(SynthConfig(seed=8))
    cfg = TrainConfig(seed=4)
    assert dumps_model(train_one(ds, cfg)) == dumps_model(train_one(ds, cfg))


def test_loss_non_increasing_small_step():
    tr, _ = synth_train_test(SynthConfig(class_gap=1.0), 2, 2)
    history = []
    train_one(tr, TrainConfig(learning_rate=1e-3, epochs=300, seed=1), history)
    assert len(history) == 300
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_divergence_names_epoch():
    ds = synth_longtail(SynthConfig(class_gap=1.0))
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train_one(ds.with_features(ds.X * 1e6), TrainConfig(learning_rate=1e12, epochs=50))


def test_init_is_seeded_and_bounded():
    a = he_uniform_init(5, 10, 2, 7)
    assert all(np.array_equal(x, y) for (x, _), (y, _) in zip(a, he_uniform_init(5, 10, 2, 7)))
    assert not np.array_equal(a[0][0], he_uniform_init(5, 10, 2, 8)[0][0])
    assert np.abs(a[0][0]).max() <= np.sqrt(6 / 5)
    assert np.abs(a[1][0]).max() <= np.sqrt(6 / 10)


@pytest.mark.parametrize("kwargs", [
    {"hidden_width": 0}, {"learning_rate": -1.0}, {"epochs": 0},
    {"early_stop_at_train_accuracy": 0.0}, {"l2": -0.1},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_train_runs():
    ds = separable(0)
    rs = train_runs(ds, TrainConfig(), range(10))
    assert len(rs) == 10 and rs.seeds == tuple(range(10))
    assert all(n.meta["dataset_fingerprint"] == ds.fingerprint() for n in rs.networks)
    assert len({dumps_model(n) for n in rs.networks}) == 10
    assert len(train_runs(ds, TrainConfig(), [])) == 0
    with pytest.raises(ConfigError):
        train_runs(ds, TrainConfig(), [1, 1])


def test_train_runs_resample_hook():
    ds = synth_longtail(SynthConfig())
    seen = []

    def hook(d, s):
        seen.append(s)
        return d.subset(range(len(d) - s))

    rs = train_runs(ds, TrainConfig(epochs=5), [2, 0, 1], resample=hook)
    assert seen == [0, 1, 2]
    assert [len(n.meta["dataset_fingerprint"]) for n in rs.networks] == [64] * 3


def test_classifier_estimator_api():
    ds = separable(1)
    clf = ReluNetClassifier(hidden_width=6, random_state=2).fit(ds.X, np.array(ds.class_names)[ds.y])
    assert clf.get_params()["hidden_width"] == 6
    assert clone(clf).get_params() == clf.get_params()
    assert clf.score(ds.X, np.array(ds.class_names)[ds.y]) == 1.0
    proba = clf.predict_proba(ds.X)
    assert np.allclose(proba.sum(1), 1)
    net = train_one(ds, TrainConfig(hidden_width=6, seed=2))
    assert np.array_equal(clf.network_.layers[0].weights, net.layers[0].weights)


def test_classifier_passes_sklearn_checks():
    check_estimator(ReluNetClassifier(epochs=50))
