import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagrange_tuner.errors import ModelVersionMismatch
from lagrange_tuner.features import FeatureVector
from lagrange_tuner.forest import (
    ForestConfig,
    ForestModel,
    TrainConfig,
    TrainSet,
    fit_forest,
    leaf_tree,
    predict_k,
    r2_score,
    train_forest,
)

SMALL = ForestConfig(n_trees=15, seed=3)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 49))
    y = 1.5 + np.tanh(X[:, 0] + 0.5 * X[:, 3]) + rng.normal(0, 0.05, 300)
    return X, y


@pytest.fixture(scope="module")
def model(data):
    return fit_forest(*data, SMALL)


def trainset(X, y):
    return TrainSet(X, y, [f"c{i}" for i in range(len(y))], ["hevc"] * len(y))


def test_fits_signal(data):
    model = fit_forest(*data, ForestConfig(n_trees=30, max_features=16))
    rng = np.random.default_rng(1)
    Xt = rng.normal(size=(200, 49))
    yt = 1.5 + np.tanh(Xt[:, 0] + 0.5 * Xt[:, 3])
    assert r2_score(yt, model.predict(Xt)) > 0.7


def test_structure_invariants(model):
    for t in model.trees:
        split = t.feature >= 0
        assert np.all(t.feature < 49)
        assert np.all((t.value > 0) & (t.value < 6))
        assert np.all(t.left[split] > np.flatnonzero(split)) and np.all(t.left[~split] == -1)


def test_min_leaf_respected(data):
    X, y = data
    m = fit_forest(X, y, ForestConfig(n_trees=1, min_leaf=20, bootstrap=False))
    t = m.trees[0]
    leaves = t.predict(X)
    _, counts = np.unique(leaves, return_counts=True)
    assert counts.min() >= 20


def test_seeded_training_is_bit_reproducible(data):
    a, b = fit_forest(*data, SMALL), fit_forest(*data, SMALL)
    assert a.to_bytes() == b.to_bytes()
    c = fit_forest(*data, ForestConfig(n_trees=15, seed=3, n_jobs=3))
    assert c.to_bytes() == a.to_bytes()
    assert fit_forest(*data, ForestConfig(n_trees=15, seed=4)).to_bytes() != a.to_bytes()


def test_tree_order_does_not_matter(data, model):
    shuffled = ForestModel(model.trees[::-1], model.config)
    X = data[0][:50]
    np.testing.assert_allclose(shuffled.predict(X), model.predict(X), rtol=1e-12)


def test_constant_labels_single_leaf(data, caplog):
    X, _ = data
    m = fit_forest(X, np.full(len(X), 1.0))
    assert len(m.trees) == 1 and m.trees[0].n_nodes == 1
    assert np.all(m.predict(X) == 1.0)
    assert "single-leaf" in caplog.text


def test_leaf_model_constant_prediction():
    m = ForestModel([leaf_tree(1.7)])
    fv = FeatureVector(tuple(np.random.default_rng(0).normal(size=49) * 1e6))
    assert predict_k(m, fv) == 1.7


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e12, 1e12), min_size=49, max_size=49))
def test_prediction_inside_open_range(model, row):
    k = predict_k(model, FeatureVector(tuple(row)))
    assert 0 < k < 6


def test_clamp_applies_to_extreme_leaves():
    assert ForestModel([leaf_tree(6.5)]).predict(np.zeros((1, 49)))[0] < 6
    assert ForestModel([leaf_tree(-2.0)]).predict(np.zeros((1, 49)))[0] > 0


def test_save_load_round_trip(tmp_path, data, model):
    path = tmp_path / "model.bin"
    model.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"LTRF" and raw[4:6] == b"\x01\x00"
    loaded = ForestModel.load(path)
    np.testing.assert_array_equal(loaded.predict(data[0]), model.predict(data[0]))
    assert loaded.config == model.config


def test_version_mismatches_are_refused(tmp_path, model):
    raw = model.to_bytes()
    with pytest.raises(ModelVersionMismatch):
        ForestModel.from_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(ModelVersionMismatch):
        ForestModel.from_bytes(b"JUNK" + raw[4:])
    stale = ForestModel(model.trees, feature_hash="0" * 16)
    with pytest.raises(ModelVersionMismatch):
        predict_k(stale, FeatureVector((1.0,) * 49))
    with pytest.raises(ModelVersionMismatch):
        predict_k(model, FeatureVector((1.0,) * 49, version=0))


def test_train_holds_out_ten_percent(data):
    X, y = data
    cfg = TrainConfig(forest=ForestConfig(n_trees=10), grid=({"min_leaf": 5}, {"min_leaf": 10}), cv_trees=5)
    m = train_forest(trainset(X, y), cfg)
    assert m.metrics["n_holdout"] == 30 and m.metrics["n_train"] == 270
    assert m.cv_score is not None and m.metrics["holdout_r2"] > 0.5
    assert m.config.min_leaf in (5, 10) and m.config.n_trees == 10


def test_train_validation(data):
    X, y = data
    with pytest.raises(ValueError):
        train_forest(trainset(X[:40], y[:40]))
    with pytest.raises(ValueError):
        trainset(X, np.full(len(y), 6.0))


def test_product_grid():
    grid = TrainConfig.product_grid(max_features=[7, 16], min_leaf=[2, 5])
    assert len(grid) == 4 and {"max_features": 16, "min_leaf": 2} in grid


def test_heldout_error_within_three_sigma(data):
    X, y = data
    m = train_forest(trainset(X, y), TrainConfig(forest=ForestConfig(n_trees=30), grid=({},)))
    ts = trainset(X, y).assign_holdout(0.1, 0)
    Xh, yh = ts.part("holdout")
    resid = y - m.predict(X)
    assert np.all(np.abs(m.predict(Xh) - yh) <= 3 * max(resid.std(), m.metrics["holdout_rmse"]))
