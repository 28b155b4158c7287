import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from autosparse.data import synth_gaussian_blobs
from autosparse.estimator import AutoSparseClassifier

FAST = dict(hidden=(16,), epochs=5, batch_size=16, warmup=1, max_lr=0.05)


@pytest.fixture(scope="module")
def blobs():
    ds = synth_gaussian_blobs(3, 6, 60, seed=1, scale=3.0)
    labels = np.array(["cat", "dog", "emu"])[ds.labels]
    return ds.inputs, labels


def test_fit_predict(blobs):
    X, y = blobs
    clf = AutoSparseClassifier(**FAST).fit(X, y)
    assert set(clf.predict(X)) <= {"cat", "dog", "emu"}
    assert clf.score(X, y) > 0.9
    p = clf.predict_proba(X)
    np.testing.assert_allclose(p.sum(1), 1.0)
    assert len(clf.history_) == 5 and clf.n_features_in_ == 6


def test_params_and_clone():
    clf = AutoSparseClassifier(alpha0=0.3, zero_from=4)
    assert clf.get_params()["alpha0"] == 0.3
    assert clone(clf).get_params() == clf.get_params()


def test_not_fitted():
    with pytest.raises(NotFittedError):
        AutoSparseClassifier().predict(np.zeros((1, 3)))


def test_feature_mismatch(blobs):
    X, y = blobs
    clf = AutoSparseClassifier(**FAST).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :4])


def test_invalid_param_raises_config_error(blobs):
    from autosparse.training import ConfigError
    X, y = blobs
    with pytest.raises(ConfigError):
        AutoSparseClassifier(alpha0=2.0).fit(X, y)


def test_dense_mode_reports_no_sparsity(blobs):
    X, y = blobs
    clf = AutoSparseClassifier(prune=False, **FAST).fit(X, y)
    assert clf.sparsity_report().global_sparsity == 0.0
    assert clf.flops_fractions() == (1.0, 1.0)


def test_topk_and_image_input(rng):
    X = rng.random((40, 5, 5)).astype(np.float32)
    y = (X.mean(axis=(1, 2)) > 0.5).astype(int)
    clf = AutoSparseClassifier(hidden=({"type": "conv2d", "channels": 2, "kernel": 3},),
                               backward_keep_fraction=0.5, **{k: v for k, v in FAST.items() if k != "hidden"})
    clf.fit(X, y)
    assert clf.predict(X.reshape(40, 25)).shape == (40,)
