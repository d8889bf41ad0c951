"""Gap-blocked cross-fitting and the DML point estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    ArmStarvationError,
    DegenerateSplitError,
    HorizonSample,
    TsdmlError,
)
from .learners import ForestSpec, Spec, fit_model
from .score import (
    DEFAULT_ETA,
    clip_propensity,
    dr_scores,
    dr_scores_multilevel,
    stable_mean,
)
from .variance import IrfEstimate, irf_from_scores

__all__ = [
    "GAP_SIDES",
    "SplitPlan",
    "make_split_plan",
    "FoldEstimate",
    "DmlResult",
    "LearnerConfig",
    "MultiLevelLearnerConfig",
    "OracleNuisances",
    "derive_seed",
    "dml_estimate",
    "dml_estimate_two_samples",
    "dml_estimate_multilevel",
    "estimate_irf",
]

GAP_SIDES = ("train", "eval", "both")
_ROLES = {"mu1": 1, "mu0": 2, "e": 3, "mu": 4}


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Evaluation folds and their training sets over indices ``0..T-1``.

    ``folds[i]`` is the evaluated set of fold ``i``; ``train[i]`` holds the
    indices used to fit the nuisances that score it.
    """

    T: int
    K: int
    k_T: int
    gap_side: str
    folds: tuple[np.ndarray, ...]
    train: tuple[np.ndarray, ...]

    @property
    def evaluated(self) -> np.ndarray:
        return np.concatenate(self.folds)

    @property
    def weights(self) -> np.ndarray:
        n = np.array([len(f) for f in self.folds], dtype=float)
        return n / n.sum()

    def min_distance(self) -> int:
        """Smallest |train index - evaluated index| over all folds."""
        out = self.T
        for ev, tr in zip(self.folds, self.train):
            pos = np.searchsorted(ev, tr)
            left = np.abs(tr - ev[np.clip(pos - 1, 0, len(ev) - 1)])
            right = np.abs(tr - ev[np.clip(pos, 0, len(ev) - 1)])
            out = min(out, int(np.minimum(left, right).min()))
        return out


def make_split_plan(T: int, K: int, k_T: int, gap_side: str = "train") -> SplitPlan:
    """Split ``0..T-1`` into K contiguous folds separated by a gap of k_T.

    ``gap_side`` decides which side gives up the k_T indices at each
    train/evaluation boundary: ``"train"`` drops them from the training set
    (every index is evaluated), ``"eval"`` trims them from the evaluation
    fold, ``"both"`` trims ``k_T // 2`` from the fold and the rest from the
    training set. With K=2 and ``"both"``, T=100, k_T=20 gives the
    evaluation folds 0..39 and 60..99.
    """
    T, K, k_T = int(T), int(K), int(k_T)
    if gap_side not in GAP_SIDES:
        raise ValueError(f"gap_side must be one of {GAP_SIDES}, got {gap_side!r}")
    if K < 2:
        raise DegenerateSplitError(f"degenerate split: K={K} < 2")
    if k_T < 0:
        raise DegenerateSplitError(f"degenerate split: k_T={k_T} < 0")
    if T < K:
        raise DegenerateSplitError(f"degenerate split: T={T} is smaller than K={K}")
    # with the gap on the training side no index is lost from evaluation, so
    # only the per-fold checks below apply
    if gap_side != "train" and T <= K + K * k_T:
        raise DegenerateSplitError(
            f"degenerate split: T={T} must exceed K + K*k_T = {K + K * k_T}"
        )
    trim = {"train": 0, "eval": k_T, "both": k_T // 2}[gap_side]
    idx = np.arange(T)
    blocks = np.array_split(idx, K)
    folds, train = [], []
    for i, block in enumerate(blocks):
        lo = block[0] + (trim if i > 0 else 0)
        hi = block[-1] - (trim if i < K - 1 else 0)
        if hi < lo:
            raise DegenerateSplitError(f"degenerate split: fold {i} empty after gap removal")
        ev = np.arange(lo, hi + 1)
        keep = (idx < lo - k_T) | (idx > hi + k_T)
        keep &= (idx < block[0]) | (idx > block[-1])
        tr = idx[keep]
        if tr.size == 0:
            raise DegenerateSplitError(f"degenerate split: fold {i} has no training indices")
        for a in (ev, tr):
            a.flags.writeable = False
        folds.append(ev)
        train.append(tr)
    plan = SplitPlan(T, K, k_T, gap_side, tuple(folds), tuple(train))
    assert plan.min_distance() > k_T
    return plan


def derive_seed(seed: int, *key: int) -> int:
    """Independent 32-bit seed for a (fold, role, ...) key under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


class NuisanceProvider(Protocol):
    def nuisances(self, train: HorizonSample, ev: HorizonSample, seed: int, fold: int):
        """Return ``(mu1, mu0, e)`` on the rows of ``ev``."""


@dataclass(frozen=True)
class LearnerConfig:
    """T-learner nuisances: separate outcome models per arm plus a propensity.

    Each role carries its own spec so they can be tuned independently; the
    rng seed inside each spec is replaced by one derived per fold.
    """

    mu1: Spec = field(default_factory=ForestSpec)
    mu0: Spec = field(default_factory=ForestSpec)
    e: Spec = field(default_factory=lambda: ForestSpec(max_features="sqrt"))

    @classmethod
    def uniform(cls, outcome: Spec, propensity: Spec) -> "LearnerConfig":
        return cls(mu1=outcome, mu0=outcome, e=propensity)

    def outcome_means(self, train: HorizonSample, ev: HorizonSample, seed: int, fold: int):
        treated = train.d == 1
        n1, n0 = int(treated.sum()), int((~treated).sum())
        if n1 < 2 or n0 < 2:
            raise ArmStarvationError(
                f"arm starvation in fold {fold}: training set has {n1} treated and "
                f"{n0} control rows (need >= 2 of each)"
            )
        m1 = fit_model(self.mu1.with_seed(derive_seed(seed, fold, _ROLES["mu1"])),
                       train.x[treated], train.y_fwd[treated])
        m0 = fit_model(self.mu0.with_seed(derive_seed(seed, fold, _ROLES["mu0"])),
                       train.x[~treated], train.y_fwd[~treated])
        return m1.predict(ev.x), m0.predict(ev.x)

    def nuisances(self, train: HorizonSample, ev: HorizonSample, seed: int, fold: int):
        mu1, mu0 = self.outcome_means(train, ev, seed, fold)
        me = fit_model(self.e.with_seed(derive_seed(seed, fold, _ROLES["e"])),
                       train.x, train.d, task="classification", classes=(0, 1))
        return mu1, mu0, me.proba_of(ev.x, 1)


@dataclass(frozen=True)
class OracleNuisances:
    """Known nuisance functions injected in place of fitted learners.

    ``mu(d, x)`` returns outcome means for arm ``d`` on rows ``x``;
    ``e(x)`` returns treatment probabilities.
    """

    mu: Callable[[int, np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]

    def outcome_means(self, train, ev, seed, fold):
        return np.asarray(self.mu(1, ev.x), float), np.asarray(self.mu(0, ev.x), float)

    def nuisances(self, train, ev, seed, fold):
        mu1, mu0 = self.outcome_means(train, ev, seed, fold)
        return mu1, mu0, np.asarray(self.e(ev.x), float)


@dataclass(eq=False)
class FoldEstimate:
    """Scores and nuisance predictions for one evaluation fold."""

    fold: int
    t: np.ndarray
    scores: np.ndarray
    theta: float
    mu1: np.ndarray
    mu0: np.ndarray
    e: np.ndarray
    n_clipped: int = 0
    train_arm_counts: dict = field(default_factory=dict)
    eval_arm_counts: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.scores)


@dataclass(eq=False)
class DmlResult:
    """Combined point estimate with the per-fold pieces needed downstream."""

    h: int
    theta: float
    folds: list[FoldEstimate]
    diagnostics: dict = field(default_factory=dict)
    contrast: tuple[int, int] | None = None

    @property
    def counts(self) -> list[int]:
        return [f.n for f in self.folds]

    @property
    def effective_count(self) -> int:
        return sum(self.counts)

    @property
    def weights(self) -> list[float]:
        tot = self.effective_count
        return [c / tot for c in self.counts]

    @property
    def scores(self) -> np.ndarray:
        return np.concatenate([f.scores for f in self.folds])


def _arm_counts(d: np.ndarray) -> dict:
    vals, counts = np.unique(d, return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}


def _gap_warnings(plan: SplitPlan, h: int, max_lag: int) -> list[str]:
    out = []
    if plan.k_T < h:
        out.append(f"gap k_T={plan.k_T} is smaller than the horizon h={h}")
    if plan.k_T < max_lag:
        out.append(f"gap k_T={plan.k_T} is smaller than the largest lag {max_lag}")
    for msg in out:
        warnings.warn(msg, stacklevel=3)
    return out


def _score_fold(fold: int, ev: HorizonSample, mu1, mu0, e, eta, train_d) -> FoldEstimate:
    e_c, n_clip = clip_propensity(e, eta)
    g = dr_scores(ev.y_fwd, ev.d, mu1, mu0, e_c)
    return FoldEstimate(
        fold=fold, t=ev.t, scores=g, theta=stable_mean(g), mu1=np.asarray(mu1, float),
        mu0=np.asarray(mu0, float), e=e_c, n_clipped=n_clip,
        train_arm_counts=_arm_counts(train_d), eval_arm_counts=_arm_counts(ev.d),
    )


def _combine(h, folds: list[FoldEstimate], diagnostics: dict, contrast=None) -> DmlResult:
    folds = sorted(folds, key=lambda f: f.fold)
    theta = stable_mean(np.concatenate([f.scores for f in folds]))
    n_clip = sum(f.n_clipped for f in folds)
    n_eval = sum(f.n for f in folds)
    diagnostics = dict(diagnostics)
    diagnostics["n_clipped"] = n_clip
    diagnostics["clip_rate"] = n_clip / n_eval
    diagnostics["fold_arm_counts"] = [
        {"fold": f.fold, "train": f.train_arm_counts, "eval": f.eval_arm_counts}
        for f in folds
    ]
    return DmlResult(h, theta, folds, diagnostics, contrast)


def dml_estimate(
    sample: HorizonSample,
    plan: SplitPlan,
    learners: NuisanceProvider,
    seed: int = 0,
    eta: float = DEFAULT_ETA,
    max_lag: int = 0,
    fold_order: Sequence[int] | None = None,
) -> DmlResult:
    """Cross-fitted DML estimate on one series.

    For every fold the nuisances are fitted on the plan's training indices
    and the doubly robust score is averaged over the fold. The combined
    estimate weights folds by their evaluated counts, i.e. it is the mean
    score over all evaluated indices.

    Parameters
    ----------
    sample : HorizonSample
    plan : SplitPlan
        Must be built for ``len(sample)`` indices.
    learners : LearnerConfig or OracleNuisances
    seed : int
        Base seed; each (fold, role) fit gets a derived seed, so the result
        does not depend on ``fold_order``.
    eta : float
        Propensity clipping level.
    max_lag : int
        Largest lag carried by the features, used for the gap warning only.
    """
    if plan.T != len(sample):
        raise DegenerateSplitError(
            f"degenerate split: plan covers {plan.T} indices, sample has {len(sample)}"
        )
    diag = {"warnings": _gap_warnings(plan, sample.h, max_lag)}
    order = range(plan.K) if fold_order is None else fold_order
    folds = []
    for i in order:
        tr = sample.subset(plan.train[i])
        ev = sample.subset(plan.folds[i])
        mu1, mu0, e = learners.nuisances(tr, ev, seed, i)
        folds.append(_score_fold(i, ev, mu1, mu0, e, eta, tr.d))
    return _combine(sample.h, folds, diag)


def dml_estimate_two_samples(
    s1: HorizonSample,
    s2: HorizonSample,
    learners: NuisanceProvider,
    seed: int = 0,
    eta: float = DEFAULT_ETA,
) -> DmlResult:
    """Cross-fitting over two independent series: fit on one, score the other.

    Fold 0 evaluates ``s1`` with nuisances fitted on ``s2`` and fold 1 the
    reverse, using the same seed derivation as :func:`dml_estimate`.
    """
    if s1.h != s2.h:
        raise TsdmlError(f"samples have different horizons: {s1.h} and {s2.h}")
    folds = []
    for i, (tr, ev) in enumerate(((s2, s1), (s1, s2))):
        mu1, mu0, e = learners.nuisances(tr, ev, seed, i)
        folds.append(_score_fold(i, ev, mu1, mu0, e, eta, tr.d))
    return _combine(s1.h, folds, {"warnings": []})


@dataclass(frozen=True)
class MultiLevelLearnerConfig:
    """S-learner outcome model (features plus level dummies) and a multiclass
    propensity model."""

    mu: Spec = field(default_factory=ForestSpec)
    e: Spec = field(default_factory=lambda: ForestSpec(max_features="sqrt"))


def _with_dummies(x: np.ndarray, d, codes: Sequence[int]) -> np.ndarray:
    d = np.broadcast_to(np.asarray(d), (x.shape[0],))
    dummies = np.column_stack([(d == c).astype(float) for c in codes[1:]])
    return np.hstack([x, dummies])


def dml_estimate_multilevel(
    sample: HorizonSample,
    plan: SplitPlan,
    learners: MultiLevelLearnerConfig,
    baseline: int,
    seed: int = 0,
    eta: float = DEFAULT_ETA,
    max_lag: int = 0,
) -> list[DmlResult]:
    """Pairwise effects of every non-baseline level against ``baseline``.

    One joint outcome model and one multiclass propensity model are fitted
    per fold and shared across contrasts. Returns one result per target
    level, in code order.
    """
    codes = tuple(sample.codes)
    if baseline not in codes:
        raise TsdmlError(f"baseline {baseline} not among treatment codes {codes}")
    if plan.T != len(sample):
        raise DegenerateSplitError(
            f"degenerate split: plan covers {plan.T} indices, sample has {len(sample)}"
        )
    diag = {"warnings": _gap_warnings(plan, sample.h, max_lag)}
    targets = [c for c in codes if c != baseline]
    per_target: dict[int, list[FoldEstimate]] = {c: [] for c in targets}
    for i in range(plan.K):
        tr = sample.subset(plan.train[i])
        ev = sample.subset(plan.folds[i])
        counts = _arm_counts(tr.d)
        starved = {c: counts.get(c, 0) for c in codes if counts.get(c, 0) < 2}
        if starved:
            raise ArmStarvationError(
                f"arm starvation in fold {i}: training arm counts {counts}, "
                f"levels {sorted(starved)} have fewer than 2 rows"
            )
        mm = fit_model(learners.mu.with_seed(derive_seed(seed, i, _ROLES["mu"])),
                       _with_dummies(tr.x, tr.d, codes), tr.y_fwd)
        me = fit_model(learners.e.with_seed(derive_seed(seed, i, _ROLES["e"])),
                       tr.x, tr.d, task="classification", classes=codes)
        proba = me.predict_proba(ev.x)
        mu = {c: mm.predict(_with_dummies(ev.x, c, codes)) for c in codes}
        e_clip = {}
        n_clip = 0
        for j, c in enumerate(codes):
            e_clip[c], k = clip_propensity(proba[:, j], eta)
            n_clip += k
        for c in targets:
            g = dr_scores_multilevel(ev.y_fwd, ev.d, c, baseline, mu[c], mu[baseline],
                                     e_clip[c], e_clip[baseline])
            per_target[c].append(FoldEstimate(
                fold=i, t=ev.t, scores=g, theta=stable_mean(g), mu1=mu[c],
                mu0=mu[baseline], e=e_clip[c], n_clipped=n_clip,
                train_arm_counts=counts, eval_arm_counts=_arm_counts(ev.d),
            ))
    return [_combine(sample.h, per_target[c], diag, contrast=(c, baseline)) for c in targets]


def estimate_irf(
    result: DmlResult,
    alphas: Sequence[float] = (0.05, 0.01),
    bandwidth: int | None = None,
    method: str = "DML",
) -> IrfEstimate:
    """Attach the long-run variance and confidence bounds to a DML result."""
    diag = dict(result.diagnostics)
    if result.contrast is not None:
        diag["contrast"] = list(result.contrast)
    return irf_from_scores(
        result.h,
        result.theta,
        [f.scores for f in result.folds],
        alphas=alphas,
        bandwidth=bandwidth,
        method=method,
        fold_thetas=[f.theta for f in result.folds],
        diagnostics=diag,
    )
