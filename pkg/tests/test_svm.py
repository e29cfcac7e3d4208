from __future__ import annotations

import numpy as np
import pytest

from hspi.errors import ShapeError, UsageError
from hspi.logits import FeatureDataset
from hspi.svm import SvmModel, svm_predict, svm_train


def _clusters(centers, n=40, spread=0.5, seed=0, mode="split"):
    rng = np.random.default_rng(seed)
    feats = np.concatenate([rng.normal(c, spread, size=(n, len(c))) for c in centers])
    labels = np.repeat(np.arange(len(centers)), n)
    return FeatureDataset(feats, labels, [f"p{i}" for i in range(len(centers))], 10, mode)


def test_separable_two_classes():
    model = svm_train(_clusters([(-3.0, -3.0), (3.0, 3.0)]))
    assert model.training.accuracy == 1.0
    assert svm_predict(model, np.array([-3.0, -3.0]))[0] == 0
    assert svm_predict(model, np.array([3.0, 3.0]))[0] == 1


def test_separable_three_classes():
    data = _clusters([(-6.0, 0.0), (0.0, 6.0), (6.0, 0.0)], seed=1)
    model = svm_train(data, lam=1e-3, epochs=100)
    pred, scores = svm_predict(model, data.features)
    assert (pred == data.labels).mean() >= 0.95
    assert scores.shape == (120, 3)


def test_training_is_seeded():
    data = _clusters([(-1.0, 0.0), (1.0, 0.0)], spread=1.0)
    a = svm_train(data, epochs=20, seed=3)
    b = svm_train(data, epochs=20, seed=3)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.biases, b.biases)


def test_weights_stay_in_the_pegasos_ball():
    lam = 0.1
    model = svm_train(_clusters([(-1.0, 0.0), (1.0, 0.0)], spread=2.0), lam=lam, epochs=10)
    norms = np.linalg.norm(np.hstack([model.weights, model.biases[:, None]]), axis=1)
    assert (norms <= 1 / np.sqrt(lam) + 1e-9).all()


def test_raw_mode_skips_standardization():
    model = svm_train(_clusters([(-3.0, -3.0), (3.0, 3.0)], mode="split-raw"), epochs=20)
    np.testing.assert_array_equal(model.mean, [0.0, 0.0])
    np.testing.assert_array_equal(model.scale, [1.0, 1.0])


def test_zero_features_fall_back_to_the_bias():
    model = SvmModel(weights=np.zeros((2, 3)), biases=np.array([0.0, 0.5]), mean=np.zeros(3), scale=np.ones(3),
                     class_names=["a", "b"])
    label, scores = svm_predict(model, np.zeros(3))
    assert label == 1
    np.testing.assert_array_equal(scores, [0.0, 0.5])


def test_training_errors():
    data = _clusters([(0.0, 0.0)])
    with pytest.raises(UsageError) as info:
        svm_train(data)
    assert info.value.code == "single-class"
    two = _clusters([(0.0, 0.0), (1.0, 1.0)])
    missing = FeatureDataset(two.features, two.labels, ["a", "b", "c"], 10, "split")
    with pytest.raises(UsageError) as info:
        svm_train(missing)
    assert info.value.code == "empty-class"
    with pytest.raises(UsageError):
        svm_train(two, lam=0.0)


def test_predict_dimension_mismatch():
    model = svm_train(_clusters([(-3.0, -3.0), (3.0, 3.0)]), epochs=5)
    with pytest.raises(ShapeError):
        svm_predict(model, np.zeros(3))


@pytest.mark.parametrize("mode", ["split-raw", "split", "bits"])
def test_row_standardizing_to_zero_predicts_largest_bias(mode, rng):
    weights = rng.normal(size=(3, 4))
    biases = np.array([0.2, -0.1, 0.7])
    if mode == "split-raw":
        mean, scale = np.zeros(4), np.ones(4)
    else:
        mean, scale = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)
    model = SvmModel(weights=weights, biases=biases, mean=mean, scale=scale, class_names=["a", "b", "c"],
                     feature_mode=mode)
    row = np.zeros(4) if mode == "split-raw" else mean.copy()
    label, scores = svm_predict(model, row)
    assert label == 2
    np.testing.assert_array_equal(scores, biases)


def test_trained_raw_model_maps_zero_row_to_its_bias():
    model = svm_train(_clusters([(-3.0, -3.0), (3.0, 3.0), (3.0, -3.0)], mode="split-raw"), epochs=20)
    label, scores = svm_predict(model, np.zeros(2))
    np.testing.assert_array_equal(scores, model.biases)
    assert label == int(np.argmax(model.biases))
