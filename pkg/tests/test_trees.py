import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.tree import DecisionTreeRegressor

from edgetwin.errors import DimensionMismatch, EmptyDataset
from edgetwin.trees import GradientBoostedTrees, Presorted, RegressionTree, grow_tree


def brute_best_split(X, y, min_leaf):
    """Try every (feature, midpoint) pair; keep the largest SSE reduction.

    Ties go to the lower feature index, then the lower threshold.
    """
    best = (0.0, -1, 0.0)
    base = ((y - y.mean()) ** 2).sum()
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            gain = base - sse
            if gain > best[0] + 1e-9 * max(1.0, base):
                best = (gain, f, thr)
    return best


def brute_tree_predict(X, y, Xq, depth, min_leaf):
    """Recursive reference tree; returns predictions for ``Xq``."""
    gain, f, thr = brute_best_split(X, y, min_leaf)
    if depth == 0 or f < 0 or gain <= 1e-12 * (y ** 2).sum():
        return np.full(len(Xq), y.mean())
    go = X[:, f] <= thr
    goq = Xq[:, f] <= thr
    out = np.empty(len(Xq))
    out[goq] = brute_tree_predict(X[go], y[go], Xq[goq], depth - 1, min_leaf)
    out[~goq] = brute_tree_predict(X[~go], y[~go], Xq[~goq], depth - 1, min_leaf)
    return out


def walk(tree, x):
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return tree.value[node]


@pytest.mark.parametrize("seed", range(8))
def test_root_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(40, 4)).astype(float)  # many repeated values
    y = X[:, 1] * 0.7 - X[:, 3] + rng.normal(0, 0.3, 40)
    tree = grow_tree(Presorted(X), y, max_depth=1, min_samples_leaf=3)
    _, f, thr = brute_best_split(X, y, 3)
    assert tree.feature[0] == f
    assert tree.threshold[0] == pytest.approx(thr)


def test_tie_goes_to_lowest_feature():
    rng = np.random.default_rng(0)
    a = rng.normal(size=30)
    X = np.column_stack([rng.normal(size=30), a, a])  # features 1 and 2 identical
    y = (a > 0).astype(float)
    tree = grow_tree(Presorted(X), y, max_depth=1, min_samples_leaf=1)
    assert tree.feature[0] == 1


@pytest.mark.parametrize("seed", range(5))
def test_tree_matches_recursive_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    X = rng.normal(size=(80, 3))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.1, 80)
    Xq = rng.normal(size=(50, 3))
    tree = grow_tree(Presorted(X), y, max_depth=3, min_samples_leaf=4)
    np.testing.assert_allclose(tree.predict(Xq), brute_tree_predict(X, y, Xq, 3, 4), atol=1e-12)
    assert tree.depth() <= 3


def test_tree_matches_sklearn_on_continuous_data():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(300, 5))
    y = X[:, 0] * X[:, 1] + rng.normal(0, 0.05, 300)
    ours = grow_tree(Presorted(X), y, max_depth=4, min_samples_leaf=5)
    ref = DecisionTreeRegressor(max_depth=4, min_samples_leaf=5, random_state=0).fit(X, y)
    Xq = rng.normal(size=(200, 5))
    np.testing.assert_allclose(ours.predict(Xq), ref.predict(Xq), atol=1e-10)


def test_tree_walk_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0])
    tree = grow_tree(Presorted(X), y, max_depth=4, min_samples_leaf=2)
    Xq = rng.normal(size=(60, 4))
    expected = np.array([walk(tree, x) for x in Xq])
    np.testing.assert_array_equal(tree.predict(Xq), expected)
    assert tree.value[tree.apply(Xq)].tolist() == expected.tolist()


def test_boosting_matches_sklearn_training_loss():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 4))
    y = np.sin(2 * X[:, 0]) + X[:, 2] + rng.normal(0, 0.1, 200)
    ours = GradientBoostedTrees(n_trees=30, learning_rate=0.2, max_depth=3, min_samples_leaf=3).fit(X, y)
    ref = GradientBoostingRegressor(n_estimators=30, learning_rate=0.2, max_depth=3,
                                    min_samples_leaf=3, criterion="squared_error",
                                    random_state=0).fit(X, y)
    np.testing.assert_allclose(ours.predict(X), ref.predict(X), atol=1e-8)


def test_training_loss_non_increasing_and_matches_staged():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(150, 3))
    y = X[:, 0] ** 2 + rng.normal(0, 0.2, 150)
    m = GradientBoostedTrees(n_trees=40, max_depth=2).fit(X, y)
    loss = np.array(m.train_loss_)
    assert len(loss) == 41
    assert np.all(np.diff(loss) <= 1e-12)
    np.testing.assert_allclose(m.staged_loss(X, y), loss, rtol=1e-10)


def test_flattened_ensemble_matches_per_tree_sum():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(100, 3))
    y = X.sum(axis=1)
    m = GradientBoostedTrees(n_trees=15, max_depth=3).fit(X, y)
    Xq = rng.normal(size=(40, 3))
    manual = m.base_ + m.learning_rate * sum(t.predict(Xq) for t in m.trees_)
    np.testing.assert_allclose(m.predict(Xq), manual, atol=1e-12)


def test_serialization_round_trip():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = X[:, 0] - X[:, 1]
    m = GradientBoostedTrees(n_trees=10, subsample=0.7, random_state=4).fit(X, y)
    back = GradientBoostedTrees.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    t = m.trees_[0]
    np.testing.assert_array_equal(RegressionTree.from_dict(t.to_dict()).predict(X), t.predict(X))


def test_estimator_api():
    m = GradientBoostedTrees(n_trees=7, max_depth=2)
    assert m.get_params()["n_trees"] == 7
    c = clone(m).set_params(learning_rate=0.3)
    assert c.learning_rate == 0.3 and m.learning_rate == 0.1
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    y = X[:, 0]
    m.fit(X, y)
    assert 0.5 < m.score(X, y) <= 1.0
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((2, 3)))
    with pytest.raises(EmptyDataset):
        GradientBoostedTrees().fit(X[:1], y[:1])
    with pytest.raises(ValueError):
        GradientBoostedTrees(learning_rate=0).fit(X, y)


def test_subsample_is_seeded():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 3))
    y = X[:, 0] + rng.normal(0, 0.5, 80)
    a = GradientBoostedTrees(n_trees=5, subsample=0.5, random_state=1).fit(X, y).predict(X)
    b = GradientBoostedTrees(n_trees=5, subsample=0.5, random_state=1).fit(X, y).predict(X)
    c = GradientBoostedTrees(n_trees=5, subsample=0.5, random_state=2).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(st.floats(-100, 100), st.integers(2, 40), st.integers(0, 1000))
def test_constant_target_gives_constant_prediction(c, n, seed):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    m = GradientBoostedTrees(n_trees=3, max_depth=2, min_samples_leaf=1).fit(X, np.full(n, c))
    np.testing.assert_allclose(m.predict(X), c, atol=1e-9)
    assert all(t.n_nodes == 1 for t in m.trees_)
