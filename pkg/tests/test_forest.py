import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rftransfer.evaluation import smape
from rftransfer.exceptions import (DimensionError, InputError, ModelFormatError,
                                   NumericError)
from rftransfer.forest import (Dataset, ForestModel, ForestParams, Tree, fit_forest,
                               load_model, predict, predict_batch, save_model)


def leaf(value):
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                np.array([value]))


def stump(feature, threshold, lo, hi):
    return Tree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
                np.array([1, -1, -1]), np.array([2, -1, -1]),
                np.array([0.5 * (lo + hi), lo, hi]))


@pytest.fixture(scope="module")
def sphere_data():
    g = np.random.default_rng(0)
    X = g.uniform(-5, 5, (1000, 2))
    return Dataset(X, np.sum(X ** 2, axis=1))


@pytest.fixture(scope="module")
def sphere_forest(sphere_data):
    return fit_forest(sphere_data, ForestParams(n_trees=100), rng=1)


def test_constant_targets():
    g = np.random.default_rng(1)
    X = g.normal(size=(40, 3))
    model = fit_forest(Dataset(X, np.full(40, 2.5)), ForestParams(n_trees=5), rng=0)
    assert np.all(predict_batch(model, g.normal(size=(20, 3))) == 2.5)


def test_two_points_pure():
    data = Dataset(np.array([[0.0], [1.0]]), np.array([-3.0, 7.0]))
    model = fit_forest(data, ForestParams(n_trees=1, bootstrap=False), rng=0)
    assert np.array_equal(predict_batch(model, data.X), data.y)


@settings(max_examples=25)
@given(st.integers(2, 60), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_single_tree_interpolates(n, d, seed):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, d))
    y = g.normal(size=n)
    model = fit_forest(Dataset(X, y), ForestParams(n_trees=1, bootstrap=False), rng=seed)
    assert np.array_equal(predict_batch(model, X), y)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.3, 1.0))
def test_predictions_within_target_range(seed, frac):
    g = np.random.default_rng(seed)
    X = g.uniform(-1, 1, (80, 3))
    y = g.normal(size=80) * 10
    model = fit_forest(Dataset(X, y), ForestParams(n_trees=7, max_features_fraction=frac),
                       rng=seed)
    p = predict_batch(model, g.uniform(-3, 3, (200, 3)))
    tol = 1e-12 * np.max(np.abs(y))
    assert np.all(p >= y.min() - tol) and np.all(p <= y.max() + tol)


def test_training_smape_sphere(sphere_data, sphere_forest):
    assert smape(sphere_data.y, predict_batch(sphere_forest, sphere_data.X)) <= 0.05


def test_refit_same_seed_identical(sphere_data, sphere_forest):
    again = fit_forest(sphere_data, ForestParams(n_trees=100), rng=1)
    X = np.random.default_rng(2).uniform(-6, 6, (500, 2))
    assert np.array_equal(predict_batch(again, X), predict_batch(sphere_forest, X))


def test_parallel_fit_matches_serial(sphere_data):
    params = ForestParams(n_trees=12, max_features_fraction=0.5)
    a = fit_forest(sphere_data, params, rng=9, n_jobs=1)
    b = fit_forest(sphere_data, params, rng=9, n_jobs=4)
    assert np.array_equal(a.value, b.value) and np.array_equal(a.threshold, b.threshold)


def test_tree_structure_invariants(sphere_forest):
    assert sphere_forest.n_trees == 100
    for tree in sphere_forest.trees[:5]:
        internal = tree.feature >= 0
        assert np.all(tree.feature[internal] < 2)
        assert np.all(np.isfinite(tree.value[~internal]))


def test_max_depth_respected(sphere_data):
    model = fit_forest(sphere_data, ForestParams(n_trees=3, max_depth=3), rng=0)
    for tree in model.trees:
        assert tree.n_leaves <= 8


def test_min_samples_leaf(sphere_data):
    model = fit_forest(sphere_data, ForestParams(n_trees=1, bootstrap=False,
                                                 min_samples_leaf=50,
                                                 min_samples_split=100), rng=0)
    assert model.trees[0].n_leaves <= 1000 // 50


def test_single_leaf_predict():
    model = ForestModel.from_trees([leaf(3.0)], d=2)
    assert predict(model, [10.0, -4.0]) == 3.0


def test_mean_of_two_trees():
    model = ForestModel.from_trees([leaf(1.0), leaf(3.0)], d=1)
    assert predict(model, [0.0]) == 2.0


def test_stump_routing():
    model = ForestModel.from_trees([stump(1, 0.5, -1.0, 1.0)], d=2)
    assert predict(model, [9.0, 0.5]) == -1.0
    assert predict(model, [9.0, 0.51]) == 1.0


def test_batch_matches_single(sphere_forest):
    X = np.random.default_rng(3).uniform(-5, 5, (50, 2))
    batch = predict_batch(sphere_forest, X)
    assert all(batch[i] == predict(sphere_forest, X[i]) for i in range(50))


def test_batch_1000_matches_loop(sphere_forest):
    X = np.random.default_rng(4).uniform(-5, 5, (1000, 2))
    loop = np.array([predict(sphere_forest, x) for x in X])
    assert np.array_equal(predict_batch(sphere_forest, X), loop)


def test_batch_empty_and_permuted(sphere_forest):
    assert predict_batch(sphere_forest, np.empty((0, 2))).shape == (0,)
    X = np.random.default_rng(5).uniform(-5, 5, (30, 2))
    perm = np.random.default_rng(6).permutation(30)
    assert np.array_equal(predict_batch(sphere_forest, X[perm]),
                          predict_batch(sphere_forest, X)[perm])


def test_dimension_mismatch(sphere_forest):
    with pytest.raises(DimensionError):
        predict(sphere_forest, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        predict_batch(sphere_forest, np.zeros((4, 3)))


def test_fit_errors():
    with pytest.raises(InputError):
        fit_forest(Dataset(np.empty((0, 2)), np.empty(0)))
    with pytest.raises(NumericError):
        Dataset(np.array([[np.nan, 1.0]]), np.array([1.0]))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(4))


def test_invalid_params():
    with pytest.raises(InputError):
        ForestParams(n_trees=0)
    with pytest.raises(InputError):
        ForestParams(max_features_fraction=0.0)
    with pytest.raises(InputError):
        ForestParams(min_samples_split=1)


def test_save_load_roundtrip(tmp_path, sphere_forest):
    path = save_model(sphere_forest, tmp_path / "model.npz")
    loaded = load_model(path)
    X = np.random.default_rng(8).uniform(-7, 7, (100, 2))
    assert np.array_equal(predict_batch(loaded, X), predict_batch(sphere_forest, X))
    assert loaded.params == sphere_forest.params


def test_save_load_keeps_max_depth(tmp_path):
    data = Dataset(np.arange(10.0).reshape(-1, 1), np.arange(10.0))
    model = fit_forest(data, ForestParams(n_trees=2, max_depth=2), rng=0)
    assert load_model(save_model(model, tmp_path / "m.npz")).params.max_depth == 2


def test_load_truncated(tmp_path, sphere_forest):
    path = save_model(sphere_forest, tmp_path / "model.npz")
    raw = path.read_bytes()
    bad = tmp_path / "truncated.npz"
    bad.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ModelFormatError, match="truncated.npz"):
        load_model(bad)


def test_load_garbage(tmp_path):
    bad = tmp_path / "garbage.npz"
    bad.write_text("not a model")
    with pytest.raises(ModelFormatError):
        load_model(bad)


def test_empty_forest_rejected():
    with pytest.raises(InputError):
        ForestModel.from_trees([], d=2)
    empty = ForestModel(np.empty(0, int), np.empty(0), np.empty(0, int),
                        np.empty(0, int), np.empty(0), np.empty(0, int), 2,
                        ForestParams())
    with pytest.raises(InputError):
        save_model(empty, "/tmp/never-written.npz")
