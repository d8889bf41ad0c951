"""Nuisance learners: random forests, gradient boosted trees, grid tuning.

Forests wrap scikit-learn's CART ensembles with single-threaded fitting so
that predictions are bit-reproducible for a given seed. The booster is a
second-order (Newton) stagewise ensemble of scikit-learn regression trees:
each round fits a tree to ``-g/h`` with sample weights ``h``, so leaf values
equal ``sum(-g)/sum(h)`` and ``min_child_weight`` bounds the hessian mass of
every leaf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable, Sequence, Union

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .core import TsdmlError

__all__ = [
    "ForestSpec",
    "BoostSpec",
    "FittedModel",
    "fit_forest_regression",
    "fit_forest_classification",
    "fit_boosted_trees",
    "fit_model",
    "blocked_cv_splits",
    "TuneResult",
    "tune_grid",
    "select_by_vote",
    "tune_boosting_draws",
    "tune_boosting_cv",
    "mse",
    "log_loss",
    "simulation_forest_grid",
    "empirical_forest_grid",
    "boost_stage1_grid",
    "LEARNING_RATES",
    "EMPIRICAL_BOOST_ROUNDS",
]

LEARNING_RATES = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5)
EMPIRICAL_BOOST_ROUNDS = (10, 110, 210, 310, 410, 510)
_FEATURE_RULES = ("all", "sqrt", "log2")


@dataclass(frozen=True)
class ForestSpec:
    """Random forest hyperparameters.

    ``max_features`` is a rule (``"all"``, ``"sqrt"``, ``"log2"``), an
    integer count, or a float fraction of the features tried per split.
    ``max_depth=None`` grows trees until leaves are pure or hit ``min_leaf``.
    """

    n_trees: int = 500
    max_depth: int | None = None
    min_leaf: int = 1
    max_features: Union[str, int, float] = "all"
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        mf = self.max_features
        if isinstance(mf, str):
            if mf not in _FEATURE_RULES:
                raise ValueError(f"max_features rule must be one of {_FEATURE_RULES}")
        elif isinstance(mf, bool) or not isinstance(mf, (int, float)):
            raise ValueError(f"invalid max_features {mf!r}")
        elif isinstance(mf, int) and mf < 1:
            raise ValueError("max_features count must be >= 1")
        elif isinstance(mf, float) and not 0.0 < mf <= 1.0:
            raise ValueError("max_features fraction must lie in (0, 1]")

    def with_seed(self, seed: int) -> "ForestSpec":
        return replace(self, rng_seed=int(seed))

    def label(self) -> str:
        return f"forest(d={self.max_depth},l={self.min_leaf},m={self.max_features},trees={self.n_trees})"


@dataclass(frozen=True)
class BoostSpec:
    """Gradient boosted tree hyperparameters.

    ``early_stop_patience=None`` disables early stopping; otherwise training
    stops once the validation loss has not improved for that many rounds.
    """

    learning_rate: float = 0.1
    n_rounds: int = 100
    max_depth: int = 6
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    early_stop_patience: int | None = 50
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")
        for name in ("subsample", "colsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1 or None")

    def with_seed(self, seed: int) -> "BoostSpec":
        return replace(self, rng_seed=int(seed))

    def label(self) -> str:
        return (
            f"boost(lr={self.learning_rate},rounds={self.n_rounds},d={self.max_depth},"
            f"w={self.min_child_weight},so={self.subsample},sf={self.colsample})"
        )


Spec = Union[ForestSpec, BoostSpec]


class FittedModel:
    """A fitted learner. Immutable once built; safe for concurrent prediction.

    Regression models expose :meth:`predict`; probability models expose
    :meth:`predict_proba` with one column per entry of ``classes``.
    """

    def __init__(self, kind: str, predict_fn: Callable, classes=None, info=None):
        self.kind = kind
        self.classes = None if classes is None else tuple(int(c) for c in classes)
        self._predict_fn = predict_fn
        self.info = dict(info or {})

    def predict(self, x) -> np.ndarray:
        if self.kind != "regression":
            raise TypeError("probability model: use predict_proba")
        return self._predict_fn(_check_x(x))

    def predict_proba(self, x) -> np.ndarray:
        if self.kind != "probability":
            raise TypeError("regression model: use predict")
        return self._predict_fn(_check_x(x))

    def proba_of(self, x, code: int) -> np.ndarray:
        return self.predict_proba(x)[:, self.classes.index(int(code))]

    @property
    def stopped_round(self) -> int | None:
        return self.info.get("stopped_round")

    @property
    def best_round(self) -> int | None:
        return self.info.get("best_round")


def _check_x(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_fit_inputs(x, y):
    x = _check_x(x)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise TsdmlError("empty training input")
    if x.shape[0] != len(y):
        raise TsdmlError(f"{x.shape[0]} feature rows but {len(y)} targets")
    if not np.all(np.isfinite(x)):
        raise TsdmlError("non-finite features in training input")
    return x, y


def _resolve_max_features(mf, n: int):
    if mf == "all":
        return None
    if isinstance(mf, str):
        return mf
    if isinstance(mf, int):
        if not 1 <= mf <= n:
            raise TsdmlError(f"max_features={mf} outside [1, {n}]")
        return mf
    return float(mf)


def fit_forest_regression(x, y, spec: ForestSpec) -> FittedModel:
    """Bagged CART regression trees with mean aggregation."""
    x, y = _check_fit_inputs(x, y)
    y = y.astype(float)
    if x.shape[0] < 2:
        raise TsdmlError("need at least 2 rows to fit a forest")
    if not np.all(np.isfinite(y)):
        raise TsdmlError("non-finite regression targets")
    rf = RandomForestRegressor(
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        min_samples_leaf=spec.min_leaf,
        max_features=_resolve_max_features(spec.max_features, x.shape[1]),
        bootstrap=spec.bootstrap,
        random_state=spec.rng_seed,
        n_jobs=1,
    )
    rf.fit(x, y)
    return FittedModel("regression", rf.predict, info={"spec": spec})


def fit_forest_classification(x, labels, spec: ForestSpec, classes=None) -> FittedModel:
    """Bagged CART classification trees (Gini) averaging leaf class frequencies.

    Declared ``classes`` absent from the training labels receive probability 0.
    """
    x, labels = _check_fit_inputs(x, labels)
    labels = labels.astype(np.int64)
    if x.shape[0] < 2:
        raise TsdmlError("need at least 2 rows to fit a forest")
    classes = tuple(sorted(set(labels.tolist()))) if classes is None else tuple(classes)
    unknown = set(labels.tolist()) - set(classes)
    if unknown:
        raise TsdmlError(f"labels {sorted(unknown)} not among declared classes {classes}")
    rf = RandomForestClassifier(
        n_estimators=spec.n_trees,
        max_depth=spec.max_depth,
        min_samples_leaf=spec.min_leaf,
        max_features=_resolve_max_features(spec.max_features, x.shape[1]),
        bootstrap=spec.bootstrap,
        random_state=spec.rng_seed,
        n_jobs=1,
    )
    rf.fit(x, labels)
    cols = [classes.index(int(c)) for c in rf.classes_]

    def predict_proba(z):
        out = np.zeros((z.shape[0], len(classes)))
        out[:, cols] = rf.predict_proba(z)
        return out

    return FittedModel("probability", predict_proba, classes=classes, info={"spec": spec})


class _Leaf:
    """Stand-in for a tree that cannot split: predicts a constant."""

    def __init__(self, value: float):
        self.value = value

    def predict(self, x):
        return np.full(x.shape[0], self.value)


def _fit_newton_tree(x, g, h, spec: BoostSpec, rng: np.random.Generator):
    n, p = x.shape
    rows = np.flatnonzero(rng.random(n) < spec.subsample) if spec.subsample < 1 else np.arange(n)
    if rows.size == 0:
        rows = np.array([rng.integers(n)])
    k = max(1, int(spec.colsample * p))
    cols = np.sort(rng.choice(p, size=k, replace=False)) if k < p else np.arange(p)
    gs, hs = g[rows], h[rows]
    hsum = hs.sum()
    frac = spec.min_child_weight / hsum if hsum > 0 else 1.0
    if frac > 0.5 or rows.size < 2:
        return _Leaf(-gs.sum() / hsum if hsum > 0 else 0.0), cols
    tree = DecisionTreeRegressor(
        max_depth=spec.max_depth,
        min_weight_fraction_leaf=frac,
        random_state=int(rng.integers(2**31 - 1)),
    )
    tree.fit(x[np.ix_(rows, cols)], -gs / hs, sample_weight=hs)
    return tree, cols


def _softmax(f):
    z = f - f.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def mse(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.mean((y - np.asarray(pred, dtype=float)) ** 2))


def log_loss(labels, proba, classes) -> float:
    """Mean negative log-likelihood; probabilities are floored at 1e-15."""
    labels = np.asarray(labels)
    proba = np.asarray(proba, dtype=float)
    idx = np.searchsorted(np.asarray(classes), labels)
    p = np.clip(proba[np.arange(len(labels)), idx], 1e-15, 1.0)
    return float(-np.mean(np.log(p)))


def fit_boosted_trees(
    x,
    y,
    spec: BoostSpec,
    valid_x=None,
    valid_y=None,
    task: str = "regression",
    classes=None,
) -> FittedModel:
    """Stagewise additive trees on squared-error or logistic/softmax loss.

    With a validation set and ``early_stop_patience`` set, training stops
    after that many rounds without strict improvement of the validation loss
    and the model keeps the trees up to the best round. ``info`` records
    ``stopped_round``, ``best_round`` and the validation loss path.
    """
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    x, y = _check_fit_inputs(x, y)
    early = spec.early_stop_patience is not None and valid_x is not None
    if spec.early_stop_patience is not None and valid_x is not None and len(valid_y) == 0:
        raise TsdmlError("early stopping needs a nonempty validation set")
    if early:
        valid_x, valid_y = _check_fit_inputs(valid_x, valid_y)
    rng = np.random.default_rng(spec.rng_seed)
    lr = spec.learning_rate

    if task == "regression":
        y = y.astype(float)
        if not np.all(np.isfinite(y)):
            raise TsdmlError("non-finite regression targets")
        k_out = 1
        base = np.array([y.mean()])
        onehot = y[:, None]
    else:
        y = y.astype(np.int64)
        classes = tuple(sorted(set(y.tolist()))) if classes is None else tuple(classes)
        onehot = (y[:, None] == np.asarray(classes)[None, :]).astype(float)
        freq = np.clip(onehot.mean(axis=0), 1e-6, 1 - 1e-6)
        if len(classes) == 2:
            k_out = 1
            base = np.array([math.log(freq[1] / freq[0])])
        else:
            k_out = len(classes)
            base = np.log(freq)

    def link(f):
        if task == "regression":
            return f[:, 0]
        if k_out == 1:
            p1 = 1.0 / (1.0 + np.exp(-f[:, 0]))
            return np.column_stack([1.0 - p1, p1])
        return _softmax(f)

    def loss(yv, f):
        out = link(f)
        return mse(yv, out) if task == "regression" else log_loss(yv, out, classes)

    f = np.tile(base, (x.shape[0], 1))
    fv = np.tile(base, (valid_x.shape[0], 1)) if early else None
    rounds: list[list] = []
    path: list[float] = []
    best, best_round, stopped = math.inf, 0, 0
    for r in range(1, spec.n_rounds + 1):
        if task == "regression":
            grads = [(f[:, 0] - y, np.ones_like(y))]
        elif k_out == 1:
            p1 = 1.0 / (1.0 + np.exp(-f[:, 0]))
            grads = [(p1 - onehot[:, 1], np.maximum(p1 * (1 - p1), 1e-16))]
        else:
            p = _softmax(f)
            grads = [(p[:, j] - onehot[:, j], np.maximum(p[:, j] * (1 - p[:, j]), 1e-16))
                     for j in range(k_out)]
        this_round = []
        for j, (g, h) in enumerate(grads):
            tree, cols = _fit_newton_tree(x, g, h, spec, rng)
            f[:, j] += lr * tree.predict(x[:, cols])
            if early:
                fv[:, j] += lr * tree.predict(valid_x[:, cols])
            this_round.append((tree, cols))
        rounds.append(this_round)
        stopped = r
        if early:
            cur = loss(valid_y, fv)
            path.append(cur)
            if cur < best:
                best, best_round = cur, r
            elif r - best_round >= spec.early_stop_patience:
                break
    if not early:
        best_round = stopped
    kept = rounds[:best_round] if early else rounds

    def raw(z, n_rounds=None):
        out = np.tile(base, (z.shape[0], 1))
        for trees in kept[: n_rounds if n_rounds is not None else len(kept)]:
            for j, (tree, cols) in enumerate(trees):
                out[:, j] += lr * tree.predict(z[:, cols])
        return out

    info = {"spec": spec, "stopped_round": stopped, "best_round": best_round,
            "valid_loss": path, "raw": raw}
    if task == "regression":
        return FittedModel("regression", lambda z: raw(z)[:, 0], info=info)
    return FittedModel("probability", lambda z: link(raw(z)), classes=classes, info=info)


def fit_model(spec: Spec, x, y, task: str = "regression", classes=None,
              valid_x=None, valid_y=None) -> FittedModel:
    """Dispatch on the spec type."""
    if isinstance(spec, ForestSpec):
        if task == "regression":
            return fit_forest_regression(x, y, spec)
        return fit_forest_classification(x, y, spec, classes=classes)
    if isinstance(spec, BoostSpec):
        return fit_boosted_trees(x, y, spec, valid_x, valid_y, task=task, classes=classes)
    raise TypeError(f"unsupported learner spec {type(spec).__name__}")


def blocked_cv_splits(T: int, K: int, gap: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous K-fold splits with ``gap`` training indices dropped at each
    boundary of the validation fold.

    Returns a list of ``(train, valid)`` index arrays, one per fold.
    """
    if K < 2:
        raise TsdmlError("blocked CV needs K >= 2")
    if gap < 0:
        raise TsdmlError("gap must be nonnegative")
    if T <= K + gap:
        raise TsdmlError(f"T={T} too short for K={K} folds with gap={gap}")
    idx = np.arange(T)
    out = []
    for k, valid in enumerate(np.array_split(idx, K)):
        lo, hi = valid[0], valid[-1]
        keep = (idx < lo - gap) | (idx > hi + gap)
        train = idx[keep]
        if train.size == 0:
            raise TsdmlError(f"fold {k}: training set empty with gap={gap}")
        out.append((train, valid))
    return out


@dataclass
class TuneResult:
    """Outcome of a grid search.

    ``table`` has one row per grid entry with keys ``index``, ``spec``,
    ``mean_score``, ``scores`` (per split), ``failed`` and ``wins``.
    """

    best: Spec
    best_index: int
    table: list[dict] = field(default_factory=list)


def _evaluate(spec, task, x, y, train, valid, classes):
    early = isinstance(spec, BoostSpec) and spec.early_stop_patience is not None
    model = fit_model(
        spec, x[train], y[train], task=task, classes=classes,
        valid_x=x[valid] if early else None, valid_y=y[valid] if early else None,
    )
    if task == "regression":
        s = mse(y[valid], model.predict(x[valid]))
    else:
        s = log_loss(y[valid], model.predict_proba(x[valid]), model.classes)
    return s, model.best_round


def tune_grid(
    task: str,
    grid: Sequence[Spec],
    x,
    y,
    splits: Sequence[tuple[np.ndarray, np.ndarray]],
    select: str = "mean",
    classes=None,
) -> TuneResult:
    """Evaluate every spec on every split and pick the best one.

    ``select="mean"`` takes the lowest average validation loss (MSE for
    regression, log-loss for classification). ``select="vote"`` takes the
    spec that wins the most splits, ties broken by mean loss. Remaining ties
    go to the first spec in grid order. Specs whose fit raises are marked
    failed and excluded.
    """
    if not grid or not splits:
        raise TsdmlError("tune_grid needs a nonempty grid and split list")
    if select not in ("mean", "vote"):
        raise ValueError(f"unknown selection rule {select!r}")
    x = _check_x(x)
    y = np.asarray(y)
    if task == "classification" and classes is None:
        classes = tuple(sorted(set(y.astype(np.int64).tolist())))
    table = []
    for i, spec in enumerate(grid):
        scores, rounds, failed = [], [], False
        for train, valid in splits:
            try:
                s, r = _evaluate(spec, task, x, y, train, valid, classes)
            except (TsdmlError, ValueError):
                failed = True
                break
            scores.append(s)
            rounds.append(r)
        table.append({
            "index": i, "spec": spec, "scores": scores, "best_rounds": rounds,
            "failed": failed,
            "mean_score": float(np.mean(scores)) if scores and not failed else math.inf,
            "wins": 0,
        })
    ok = [row for row in table if not row["failed"]]
    if not ok:
        raise TsdmlError("every spec in the grid failed to fit")
    for j in range(len(splits)):
        winner = min(ok, key=lambda row: (row["scores"][j], row["index"]))
        winner["wins"] += 1
    if select == "mean":
        best = min(ok, key=lambda row: (row["mean_score"], row["index"]))
    else:
        best = min(ok, key=lambda row: (-row["wins"], row["mean_score"], row["index"]))
    return TuneResult(best["spec"], best["index"], table)


def select_by_vote(results: Sequence[TuneResult]) -> tuple[Spec, dict]:
    """Most frequent per-draw winner across repeated tuning draws.

    Ties are broken by the mean loss across draws, then by grid order.
    Returns the selected spec and a summary keyed by grid index.
    """
    if not results:
        raise TsdmlError("no tuning draws to vote over")
    n = len(results[0].table)
    votes = np.zeros(n, dtype=int)
    sums = np.zeros(n)
    for res in results:
        votes[res.best_index] += 1
        sums += np.array([row["mean_score"] for row in res.table])
    means = sums / len(results)
    order = sorted(range(n), key=lambda i: (-votes[i], means[i], i))
    best = order[0]
    summary = {i: {"votes": int(votes[i]), "mean_score": float(means[i])} for i in range(n)}
    return results[0].table[best]["spec"], summary


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def tune_boosting_draws(
    task: str,
    draws: Sequence[tuple],
    stage2_draws: Sequence[tuple] | None = None,
    stage1_grid: Sequence[BoostSpec] | None = None,
    learning_rates: Sequence[float] = LEARNING_RATES,
    classes=None,
) -> tuple[BoostSpec, dict]:
    """Two-stage booster tuning over independent (train, validation) draws.

    Each draw is ``(x_train, y_train, x_valid, y_valid)``. Stage 1 picks the
    tree parameters with the best mean validation loss at the grid's
    learning rate with early stopping. Stage 2 picks the learning rate that
    wins most often across ``stage2_draws`` and sets the number of rounds to
    the average early-stopped round for that rate, rounded half up.
    """
    stage1_grid = list(stage1_grid or boost_stage1_grid())
    stage2_draws = stage2_draws if stage2_draws is not None else draws

    def pooled(draw_list):
        xs, ys, splits, off = [], [], [], 0
        for xt, yt, xv, yv in draw_list:
            nt, nv = len(yt), len(yv)
            xs += [np.asarray(xt, float), np.asarray(xv, float)]
            ys += [np.asarray(yt), np.asarray(yv)]
            splits.append((np.arange(off, off + nt), np.arange(off + nt, off + nt + nv)))
            off += nt + nv
        return np.vstack(xs), np.concatenate(ys), splits

    x1, y1, sp1 = pooled(draws)
    stage1 = tune_grid(task, stage1_grid, x1, y1, sp1, select="mean", classes=classes)
    tree_spec = stage1.best
    x2, y2, sp2 = pooled(stage2_draws)
    lr_grid = [replace(tree_spec, learning_rate=lr) for lr in learning_rates]
    per_draw = [
        tune_grid(task, lr_grid, x2, y2, [split], select="mean", classes=classes)
        for split in sp2
    ]
    chosen, summary = select_by_vote(per_draw)
    idx = lr_grid.index(chosen)
    rounds = [res.table[idx]["best_rounds"][0] for res in per_draw]
    n_rounds = max(1, _round_half_up(float(np.mean(rounds))))
    final = replace(chosen, n_rounds=n_rounds, early_stop_patience=None)
    return final, {"stage1": stage1, "stage2": summary, "rounds": rounds}


def tune_boosting_cv(
    task: str,
    x,
    y,
    splits,
    stage1_grid: Sequence[BoostSpec] | None = None,
    learning_rates: Sequence[float] = LEARNING_RATES,
    rounds: Sequence[int] = EMPIRICAL_BOOST_ROUNDS,
    classes=None,
) -> tuple[BoostSpec, dict]:
    """Two-stage booster tuning by blocked cross-validation on one sample.

    Stage 1 searches tree parameters at learning rate 0.1 with 500 rounds
    and no early stopping; stage 2 searches all (learning rate, rounds)
    combinations. Both stages select by mean validation loss.
    """
    if stage1_grid is None:
        stage1_grid = boost_stage1_grid(n_rounds=500, patience=None)
    stage1 = tune_grid(task, stage1_grid, x, y, splits, select="mean", classes=classes)
    grid2 = [
        replace(stage1.best, learning_rate=lr, n_rounds=nr, early_stop_patience=None)
        for lr in learning_rates
        for nr in rounds
    ]
    stage2 = tune_grid(task, grid2, x, y, splits, select="mean", classes=classes)
    return stage2.best, {"stage1": stage1, "stage2": stage2}


def simulation_forest_grid(n_trees: int = 500, max_features="all") -> list[ForestSpec]:
    """Depth {10, 20, 50} x min leaf {1, 5, 10}."""
    return [
        ForestSpec(n_trees=n_trees, max_depth=d, min_leaf=l, max_features=max_features)
        for d, l in product((10, 20, 50), (1, 5, 10))
    ]


def empirical_forest_grid(n_trees: int = 500) -> list[ForestSpec]:
    """Depth x min leaf x features-per-split grid for blocked-CV tuning."""
    depths = (1, 2, 3, 4, 5, 10, 20, 30, 40, 50, 100, 200)
    leaves = (1, 2, 3, 4, 5, 10, 20, 30, 40, 50)
    return [
        ForestSpec(n_trees=n_trees, max_depth=d, min_leaf=l, max_features=m)
        for d, l, m in product(depths, leaves, ("sqrt", "log2", "all"))
    ]


def boost_stage1_grid(
    learning_rate: float = 0.1, n_rounds: int = 10_000, patience: int | None = 50
) -> list[BoostSpec]:
    """Depth 1..10 x min child weight 1..10 x row/feature subsampling."""
    fracs = (0.25, 0.5, 0.75, 1.0)
    return [
        BoostSpec(
            learning_rate=learning_rate, n_rounds=n_rounds, max_depth=d,
            min_child_weight=float(w), subsample=so, colsample=sf,
            early_stop_patience=patience,
        )
        for d, w, so, sf in product(range(1, 11), range(1, 11), fracs, fracs)
    ]
