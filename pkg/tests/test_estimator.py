import numpy as np
import pytest
from sklearn.base import clone

from swinmamba.data import stack, synth_dataset
from swinmamba.estimator import SwinMambaSegmenter, check_images, check_label_maps

TINY = dict(base_dim=4, d_state=2, steps=3, batch_size=4, eval_every=3)


def _data(n=10, seed=0):
    return stack(synth_dataset(seed, n, 32, 32))


def test_get_params_and_clone():
    est = SwinMambaSegmenter(base_dim=8, window=7, shift=3)
    p = est.get_params()
    assert p["base_dim"] == 8 and p["window"] == 7 and p["lr"] == 3e-4
    c = clone(est)
    assert c.get_params() == p and c is not est
    c.set_params(steps=5)
    assert c.steps == 5 and est.steps == 500


def test_check_images():
    X = np.zeros((2, 3, 4, 4), dtype=np.float32)
    assert check_images(X).dtype == np.float64
    with pytest.raises(ValueError, match="shape"):
        check_images(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError, match="no images"):
        check_images(np.zeros((0, 3, 4, 4)))
    bad = np.zeros((1, 3, 2, 2))
    bad[0, 1, 1, 1] = np.inf
    with pytest.raises(ValueError, match="NaN or infinite"):
        check_images(bad)


def test_check_label_maps():
    X = np.zeros((2, 3, 4, 4))
    y = check_label_maps(np.ones((2, 4, 4), dtype=np.int32), X, 3)
    assert y.dtype == np.uint8
    assert check_label_maps(np.full((2, 4, 4), 2.0), X, 3).max() == 2
    with pytest.raises(ValueError, match="shape"):
        check_label_maps(np.zeros((2, 4, 5)), X, 3)
    with pytest.raises(ValueError, match="integer"):
        check_label_maps(np.full((2, 4, 4), 0.5), X, 3)
    with pytest.raises(ValueError, match="0..2"):
        check_label_maps(np.full((2, 4, 4), 3), X, 3)


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SwinMambaSegmenter().predict(np.zeros((1, 3, 32, 32)))


def test_fit_predict_score_shapes():
    X, y = _data()
    est = SwinMambaSegmenter(**TINY).fit(X, y)
    assert est.classes_.tolist() == [0, 1, 2]
    proba = est.predict_proba(X[:2])
    assert proba.shape == (2, 3, 32, 32)
    assert np.abs(proba.sum(axis=1) - 1).max() <= 1e-12
    pred = est.predict(X[:2])
    assert pred.shape == (2, 32, 32) and pred.dtype == np.uint8
    np.testing.assert_array_equal(pred, proba.argmax(axis=1))
    s = est.score(X, y)
    assert 0.0 <= s <= 1.0
    assert 0.0 <= est.best_val_miou_ <= 1.0
    with pytest.raises(ValueError):
        est.score(X, y, sample_weight=np.ones(len(X)))


def test_fit_is_deterministic():
    X, y = _data(8, seed=1)
    a = SwinMambaSegmenter(**TINY).fit(X, y).predict_proba(X[:1])
    b = SwinMambaSegmenter(**TINY).fit(X, y).predict_proba(X[:1])
    np.testing.assert_array_equal(a, b)


def test_bad_validation_fraction():
    X, y = _data(4)
    with pytest.raises(ValueError, match="validation_fraction"):
        SwinMambaSegmenter(validation_fraction=1.0, **TINY).fit(X, y)
