import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdml.core import TsdmlError
from tsdml.dgp import b_fn
from tsdml.learners import (
    BoostSpec,
    ForestSpec,
    TuneResult,
    blocked_cv_splits,
    boost_stage1_grid,
    empirical_forest_grid,
    fit_boosted_trees,
    fit_forest_classification,
    fit_forest_regression,
    log_loss,
    mse,
    select_by_vote,
    simulation_forest_grid,
    tune_boosting_cv,
    tune_boosting_draws,
    tune_grid,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_spec_validation():
    with pytest.raises(ValueError):
        ForestSpec(n_trees=0)
    with pytest.raises(ValueError):
        ForestSpec(max_depth=0)
    with pytest.raises(ValueError):
        ForestSpec(max_features="half")
    with pytest.raises(ValueError):
        BoostSpec(learning_rate=0.0)
    with pytest.raises(ValueError):
        BoostSpec(subsample=0.0)
    with pytest.raises(ValueError):
        BoostSpec(n_rounds=0)


def test_forest_constant_target(rng):
    x = rng.standard_normal((50, 3))
    m = fit_forest_regression(x, np.full(50, 2.5), ForestSpec(n_trees=10))
    np.testing.assert_allclose(m.predict(rng.standard_normal((20, 3))), 2.5)


def test_forest_interpolates_with_pure_leaves(rng):
    x = rng.standard_normal((40, 1))
    m = fit_forest_regression(x, x[:, 0], ForestSpec(n_trees=1, bootstrap=False))
    np.testing.assert_array_equal(m.predict(x), x[:, 0])


def test_forest_depth_helps_on_xor(rng):
    x = rng.uniform(-1, 1, (400, 2))
    y = np.where(x[:, 0] * x[:, 1] > 0, 1.0, -1.0)
    shallow = fit_forest_regression(x, y, ForestSpec(n_trees=20, max_depth=1, rng_seed=1))
    deep = fit_forest_regression(x, y, ForestSpec(n_trees=20, max_depth=2, rng_seed=1))
    assert mse(y, deep.predict(x)) < mse(y, shallow.predict(x))


def test_forest_input_errors():
    with pytest.raises(TsdmlError):
        fit_forest_regression(np.empty((0, 2)), np.empty(0), ForestSpec())
    with pytest.raises(TsdmlError):
        fit_forest_regression(np.array([[np.nan], [1.0]]), [1.0, 2.0], ForestSpec())
    with pytest.raises(TsdmlError):
        fit_forest_regression(np.ones((5, 2)), np.ones(5), ForestSpec(max_features=3))


def test_classifier_single_class(rng):
    x = rng.standard_normal((30, 2))
    m = fit_forest_classification(x, np.ones(30, int), ForestSpec(n_trees=5), classes=(0, 1))
    p = m.predict_proba(rng.standard_normal((10, 2)))
    np.testing.assert_array_equal(p[:, 1], 1.0)
    np.testing.assert_array_equal(p[:, 0], 0.0)


def test_classifier_separable(rng):
    x = rng.standard_normal((60, 1))
    lab = (x[:, 0] > 0).astype(int)
    m = fit_forest_classification(x, lab, ForestSpec(n_trees=1, bootstrap=False))
    np.testing.assert_array_equal(m.proba_of(x, 1), lab)


def test_classifier_uninformative_features():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((20_000, 3))
    lab = (rng.random(20_000) < 0.3).astype(int)
    m = fit_forest_classification(x, lab, ForestSpec(n_trees=100, min_leaf=200, rng_seed=3))
    p = m.proba_of(rng.standard_normal((2000, 3)), 1)
    # frozen: share of fresh-point predictions within 0.05 of the base rate
    assert np.mean(np.abs(p - lab.mean()) <= 0.05) >= 0.95


def test_forest_determinism_and_range(rng):
    x = rng.standard_normal((200, 4))
    y = rng.standard_normal(200)
    spec = ForestSpec(n_trees=15, max_depth=5, rng_seed=9)
    a = fit_forest_regression(x, y, spec).predict(x)
    b = fit_forest_regression(x, y, spec).predict(x)
    np.testing.assert_array_equal(a, b)
    big = fit_forest_regression(x, y, ForestSpec(n_trees=60, rng_seed=9)).predict(rng.standard_normal((100, 4)))
    assert big.min() >= y.min() and big.max() <= y.max()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 4))
def test_probabilities_valid(seed, k):
    r = np.random.default_rng(seed)
    x = r.standard_normal((80, 3))
    lab = r.integers(0, k, 80)
    m = fit_forest_classification(x, lab, ForestSpec(n_trees=5, rng_seed=seed), classes=tuple(range(k)))
    p = m.predict_proba(r.standard_normal((30, 3)))
    assert p.min() >= 0 and p.max() <= 1
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_boost_constant_target_stops_early(rng):
    x = rng.standard_normal((100, 2))
    spec = BoostSpec(n_rounds=500, early_stop_patience=10, max_depth=3)
    m = fit_boosted_trees(x, np.full(100, 4.0), spec, x[:30], np.full(30, 4.0))
    np.testing.assert_allclose(m.predict(x), 4.0)
    assert m.best_round == 1
    assert m.stopped_round == 11


def test_boost_linear_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (500, 1))
    y = 2 * x[:, 0]
    m = fit_boosted_trees(x, y, BoostSpec(n_rounds=500, learning_rate=0.1, max_depth=3,
                                          early_stop_patience=None))
    assert mse(y, m.predict(x)) < 0.01 * y.var()
    assert m.stopped_round == 500


def test_boost_stops_when_validation_worsens(rng):
    x = rng.uniform(-1, 1, (300, 1))
    y = x[:, 0]
    spec = BoostSpec(n_rounds=1000, early_stop_patience=7, max_depth=2)
    m = fit_boosted_trees(x, y, spec, x[:100], -x[:100, 0])
    path = np.array(m.info["valid_loss"])
    r = int(np.argmin(path)) + 1
    assert np.all(np.diff(path[r - 1:]) > 0)
    assert m.stopped_round <= r + spec.early_stop_patience


def test_boost_classification_binary_and_multiclass(rng):
    x = rng.standard_normal((400, 2))
    lab = (x[:, 0] + 0.3 * rng.standard_normal(400) > 0).astype(int)
    m = fit_boosted_trees(x, lab, BoostSpec(n_rounds=50, max_depth=2, early_stop_patience=None),
                          task="classification")
    p = m.predict_proba(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert log_loss(lab, p, (0, 1)) < log_loss(lab, np.full((400, 2), 0.5), (0, 1))
    lab3 = np.digitize(x[:, 0], [-0.5, 0.5])
    m3 = fit_boosted_trees(x, lab3, BoostSpec(n_rounds=30, max_depth=2, early_stop_patience=None),
                           task="classification", classes=(0, 1, 2))
    p3 = m3.predict_proba(x)
    np.testing.assert_allclose(p3.sum(axis=1), 1.0)
    assert np.mean(p3.argmax(axis=1) == lab3) > 0.8


def test_boost_determinism_with_subsampling(rng):
    x = rng.standard_normal((200, 5))
    y = x[:, 0] ** 2 + rng.standard_normal(200)
    spec = BoostSpec(n_rounds=40, subsample=0.5, colsample=0.6, rng_seed=5, early_stop_patience=None)
    a = fit_boosted_trees(x, y, spec).predict(x)
    b = fit_boosted_trees(x, y, spec).predict(x)
    np.testing.assert_array_equal(a, b)


def test_boost_early_stopping_needs_validation_rows(rng):
    x = rng.standard_normal((20, 1))
    with pytest.raises(TsdmlError):
        fit_boosted_trees(x, x[:, 0], BoostSpec(), x[:0], x[:0, 0])


def test_blocked_splits_examples():
    s = blocked_cv_splits(100, 2, 0)
    assert s[0][1].tolist() == list(range(50)) and s[0][0].tolist() == list(range(50, 100))
    assert s[1][1].tolist() == list(range(50, 100)) and s[1][0].tolist() == list(range(50))
    s = blocked_cv_splits(100, 2, 10)
    assert s[1][0].tolist() == list(range(40))
    s = blocked_cv_splits(1000, 10, 24)
    for k in range(1, 9):
        train, valid = s[k]
        outside = 1000 - len(valid)
        assert len(train) == outside - 48
        assert valid[0] - 25 in train and valid[0] - 24 not in train
        assert valid[-1] + 25 in train and valid[-1] + 24 not in train
    with pytest.raises(TsdmlError):
        blocked_cv_splits(10, 2, 10)


@settings(max_examples=100, deadline=None)
@given(T=st.integers(10, 300), K=st.integers(2, 6), gap=st.integers(0, 10))
def test_blocked_splits_properties(T, K, gap):
    try:
        splits = blocked_cv_splits(T, K, gap)
    except TsdmlError:
        return
    valid = np.concatenate([v for _, v in splits])
    assert valid.tolist() == list(range(T))
    for train, v in splits:
        assert np.all((train < v[0] - gap) | (train > v[-1] + gap))


def test_tune_grid_basics(rng):
    x = rng.standard_normal((300, 5))
    y = b_fn(x) * 4 + 0.1 * rng.standard_normal(300)
    splits = blocked_cv_splits(300, 3, 0)
    one = ForestSpec(n_trees=5)
    assert tune_grid("regression", [one], x, y, splits).best is one
    grid = [ForestSpec(n_trees=30, max_depth=1, rng_seed=1), ForestSpec(n_trees=30, max_depth=20, rng_seed=1)]
    res = tune_grid("regression", grid, x, y, splits)
    assert res.best.max_depth == 20
    assert res.table[1]["mean_score"] < res.table[0]["mean_score"]
    twins = [ForestSpec(n_trees=5, rng_seed=2), ForestSpec(n_trees=5, rng_seed=2)]
    assert tune_grid("regression", twins, x, y, splits).best_index == 0


def test_tune_grid_excludes_failures(rng):
    x = rng.standard_normal((100, 2))
    y = x[:, 0]
    splits = blocked_cv_splits(100, 2, 0)
    res = tune_grid("regression", [ForestSpec(n_trees=3, max_features=5), ForestSpec(n_trees=3)],
                    x, y, splits)
    assert res.table[0]["failed"] and res.best_index == 1
    with pytest.raises(TsdmlError):
        tune_grid("regression", [ForestSpec(max_features=5)], x, y, splits)


def test_tune_grid_vote_and_classification(rng):
    x = rng.standard_normal((300, 2))
    lab = (x[:, 0] > 0).astype(int)
    grid = [ForestSpec(n_trees=10, max_depth=1), ForestSpec(n_trees=10, max_depth=4)]
    res = tune_grid("classification", grid, x, lab, blocked_cv_splits(300, 3, 5), select="vote")
    assert sum(r["wins"] for r in res.table) == 3
    assert res.best_index in (0, 1)


def _fake(best, scores):
    table = [{"index": i, "spec": f"s{i}", "mean_score": s} for i, s in enumerate(scores)]
    return TuneResult(f"s{best}", best, table)


def test_select_by_vote_tie_break():
    spec, summary = select_by_vote([_fake(0, [1.0, 2.0]), _fake(1, [3.0, 0.5]), _fake(1, [1.0, 0.9])])
    assert spec == "s1" and summary[1]["votes"] == 2
    spec, _ = select_by_vote([_fake(0, [1.0, 0.5]), _fake(1, [1.0, 0.5])])
    assert spec == "s1"


def test_grids_follow_protocol():
    sim = simulation_forest_grid()
    assert len(sim) == 9 and {s.max_depth for s in sim} == {10, 20, 50}
    assert {s.min_leaf for s in sim} == {1, 5, 10} and sim[0].n_trees == 500
    assert len(empirical_forest_grid()) == 12 * 10 * 3
    stage1 = boost_stage1_grid()
    assert len(stage1) == 10 * 10 * 4 * 4
    assert {s.subsample for s in stage1} == {0.25, 0.5, 0.75, 1.0}


def test_two_stage_boost_tuning(rng):
    def draw(seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((150, 3))
        return x, x[:, 0] + 0.1 * r.standard_normal(150)
    draws = []
    for k in range(3):
        xt, yt = draw(2 * k)
        xv, yv = draw(2 * k + 1)
        draws.append((xt, yt, xv, yv))
    grid = [BoostSpec(n_rounds=300, max_depth=d, early_stop_patience=10) for d in (1, 2)]
    spec, info = tune_boosting_draws("regression", draws, stage1_grid=grid,
                                     learning_rates=(0.1, 0.5))
    assert spec.early_stop_patience is None
    assert spec.learning_rate in (0.1, 0.5)
    rounds = info["rounds"]
    assert spec.n_rounds == int(np.floor(np.mean(rounds) + 0.5))
    x, y = draw(99)
    spec_cv, _ = tune_boosting_cv("regression", x, y, blocked_cv_splits(150, 3, 2),
                                  stage1_grid=[BoostSpec(n_rounds=20, max_depth=1, early_stop_patience=None)],
                                  learning_rates=(0.1, 0.5), rounds=(10, 30))
    assert spec_cv.n_rounds in (10, 30) and spec_cv.learning_rate in (0.1, 0.5)
