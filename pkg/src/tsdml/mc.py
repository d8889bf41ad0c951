"""Monte Carlo study harness: tuning phase, replications, metrics."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .baselines import local_projection, ra_from_crossfit, regression_adjustment
from .core import HorizonSample, TsdmlError, build_horizon_sample
from .crossfit import (
    LearnerConfig,
    derive_seed,
    dml_estimate,
    dml_estimate_two_samples,
    estimate_irf,
    make_split_plan,
)
from .dgp import DgpConfig, simulate_panel, true_irf
from .learners import (
    BoostSpec,
    ForestSpec,
    TuneResult,
    boost_stage1_grid,
    select_by_vote,
    simulation_forest_grid,
    tune_boosting_draws,
    tune_grid,
)

__all__ = [
    "SCENARIOS",
    "METHODS",
    "StudyConfig",
    "StudyResult",
    "metrics",
    "sqrtT_bias_check",
    "tune_study",
    "run_replication",
    "run_study",
    "config_fingerprint",
    "spec_from_dict",
]

SCENARIOS = ("one-sample", "two-sample")
METHODS = ("DML", "RAc", "RA", "LP")
_TUNE_KEY = 7_919


@dataclass(frozen=True)
class StudyConfig:
    """Settings of one simulation study.

    The defaults are the desk profile (N=200 replications, 100 trees);
    :meth:`paper_scale` switches to N=1000 and 500 trees. ``tune_T`` is the
    length of each tuning draw (defaults to the first entry of ``T_list``).
    ``specs`` bypasses tuning with fixed ``{h: {"mu1"|"mu0"|"e": spec}}``.
    """

    scenario: str = "one-sample"
    dgp: DgpConfig = field(default_factory=DgpConfig)
    horizons: tuple[int, ...] = (0, 1, 3, 5)
    T_list: tuple[int, ...] = (4000,)
    N: int = 200
    R: int = 10
    k_T: int = 20
    K: int = 2
    gap_side: str = "both"
    learner: str = "forest"
    alphas: tuple[float, ...] = (0.05, 0.01)
    seed_base: int = 0
    threads: int = 1
    methods: tuple[str, ...] = METHODS
    n_trees: int = 100
    tune_T: int | None = None
    forest_grid: tuple | None = None
    boost_grid: tuple | None = None
    specs: dict | None = None
    truth_draws: int = 10_000_000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SCENARIOS)}")
        if self.learner not in ("forest", "boosting"):
            raise ValueError(f"unknown learner {self.learner!r}; valid: forest, boosting")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; valid: {', '.join(METHODS)}")
        if not self.T_list:
            raise ValueError("T_list must not be empty")
        if min(self.horizons) < 0:
            raise ValueError("horizons must be nonnegative")
        for T in self.T_list:
            n = T // 2 if self.scenario == "two-sample" else T
            if n - max(self.horizons) <= self.K + self.K * self.k_T:
                raise ValueError(f"T={T} too short for K={self.K}, k_T={self.k_T}")

    def paper_scale(self) -> "StudyConfig":
        return replace(self, N=1000, n_trees=500)

    def replication_seed(self, i: int) -> int:
        return self.seed_base + i


def metrics(estimates: Sequence[float], truth: float,
            cis: Sequence[dict] | None = None) -> dict:
    """Bias ``|mean - truth|``, population std, RMSE and CI coverage.

    ``cis`` holds one ``{alpha: (lo, hi)}`` mapping per estimate.
    """
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise TsdmlError("metrics of an empty estimate set")
    out = {
        "n": int(est.size),
        "mean": float(est.mean()),
        "bias": float(abs(est.mean() - truth)),
        "std": float(est.std()),
        "rmse": float(math.sqrt(np.mean((est - truth) ** 2))),
        "coverage": {},
    }
    if cis:
        for a in cis[0]:
            inside = [lo <= truth <= hi for lo, hi in (c[a] for c in cis)]
            out["coverage"][a] = float(np.mean(inside))
    return out


def sqrtT_bias_check(rows, method: str = "DML") -> dict:
    """Slope of log|bias| against log T, per horizon.

    ``rows`` is a :class:`StudyResult` or an iterable of dicts with keys
    ``method``, ``h``, ``T`` and ``bias``. Points with zero bias are excluded
    and listed under ``excluded``; fewer than two points give a NaN slope.
    """
    if isinstance(rows, StudyResult):
        rows = rows.table()
    by_h: dict[int, list[tuple[int, float]]] = {}
    for r in rows:
        if r["method"] == method:
            by_h.setdefault(int(r["h"]), []).append((int(r["T"]), float(r["bias"])))
    report = {}
    for h, pts in sorted(by_h.items()):
        pts.sort()
        good = [(T, b) for T, b in pts if b > 0 and math.isfinite(b)]
        excluded = [T for T, b in pts if not (b > 0 and math.isfinite(b))]
        if len({T for T, _ in good}) < 2:
            slope = float("nan")
        else:
            lt = np.log([T for T, _ in good])
            lb = np.log([b for _, b in good])
            slope = float(np.polyfit(lt, lb, 1)[0])
        report[h] = {"slope": slope, "distance": abs(slope + 0.5), "points": pts,
                     "excluded": excluded}
    return report


def _draw_samples(cfg: StudyConfig, seed: int, T: int, h: int):
    if cfg.scenario == "one-sample":
        return build_horizon_sample(simulate_panel(cfg.dgp, seed, T=T), h)
    half = T // 2
    return tuple(
        build_horizon_sample(simulate_panel(cfg.dgp, derive_seed(seed, k), T=half), h)
        for k in (1, 2)
    )


def _role_data(sample: HorizonSample, role: str):
    if role == "e":
        return sample.x, sample.d
    m = sample.d == (1 if role == "mu1" else 0)
    return sample.x[m], sample.y_fwd[m]


def tune_study(cfg: StudyConfig) -> tuple[dict, dict]:
    """Pick nuisance hyperparameters from R independent (train, valid) draws.

    Each draw simulates two independent series; the grid is fitted on the
    first and scored on the second, and the spec winning most draws is kept.
    The propensity does not depend on the horizon and is tuned once.
    Returns ``({h: {role: spec}}, report)``.
    """
    T = cfg.tune_T or cfg.T_list[0]
    draws = []
    for r in range(cfg.R):
        s = derive_seed(cfg.seed_base, _TUNE_KEY, r)
        draws.append((simulate_panel(cfg.dgp, derive_seed(s, 1), T=T),
                      simulate_panel(cfg.dgp, derive_seed(s, 2), T=T)))
    roles = [(h, role) for h in cfg.horizons for role in ("mu1", "mu0")]
    roles.append((0, "e"))
    chosen: dict = {}
    report: dict = {}
    for h, role in roles:
        task = "classification" if role == "e" else "regression"
        data = []
        for p1, p2 in draws:
            s1, s2 = build_horizon_sample(p1, h), build_horizon_sample(p2, h)
            data.append((*_role_data(s1, role), *_role_data(s2, role)))
        if cfg.learner == "forest":
            grid = list(cfg.forest_grid or simulation_forest_grid(
                n_trees=cfg.n_trees, max_features="sqrt" if role == "e" else "all"))
            results: list[TuneResult] = []
            for xt, yt, xv, yv in data:
                x = np.vstack([xt, xv])
                y = np.concatenate([yt, yv])
                split = (np.arange(len(yt)), np.arange(len(yt), len(y)))
                results.append(tune_grid(task, grid, x, y, [split],
                                         classes=(0, 1) if role == "e" else None))
            spec, summary = select_by_vote(results)
        else:
            grid = list(cfg.boost_grid or boost_stage1_grid())
            spec, summary = tune_boosting_draws(task, data, stage1_grid=grid,
                                                classes=(0, 1) if role == "e" else None)
            summary = {"stage2": summary["stage2"], "rounds": summary["rounds"]}
        chosen[(h, role)] = spec
        report[f"h={h}/{role}"] = {"spec": _spec_dict(spec), "summary": summary}
    specs = {h: {"mu1": chosen[(h, "mu1")], "mu0": chosen[(h, "mu0")], "e": chosen[(0, "e")]}
             for h in cfg.horizons}
    return specs, report


def _spec_dict(spec) -> dict:
    d = asdict(spec)
    d["family"] = "forest" if isinstance(spec, ForestSpec) else "boosting"
    return d


def spec_from_dict(d: dict):
    d = dict(d)
    family = d.pop("family")
    return ForestSpec(**d) if family == "forest" else BoostSpec(**d)


def config_fingerprint(cfg: StudyConfig) -> str:
    """Hash of every setting that affects results (the thread count does not)."""
    d = asdict(replace(cfg, threads=1))
    if cfg.specs is not None:
        d["specs"] = {str(h): {k: _spec_dict(v) for k, v in roles.items()}
                      for h, roles in cfg.specs.items()}
    for key in ("forest_grid", "boost_grid"):
        if d[key] is not None:
            d[key] = [_spec_dict(s) for s in getattr(cfg, key)]
    blob = json.dumps(d, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _default_specs(cfg: StudyConfig) -> dict:
    if cfg.learner == "forest":
        out = ForestSpec(n_trees=cfg.n_trees)
        prop = ForestSpec(n_trees=cfg.n_trees, max_features="sqrt")
    else:
        out = prop = BoostSpec(early_stop_patience=None)
    return {h: {"mu1": out, "mu0": out, "e": prop} for h in cfg.horizons}


def _record(method, h, T, rep, est) -> dict:
    return {
        "method": method, "h": h, "T": T, "rep": rep, "theta": est.theta,
        "variance": est.variance, "se": est.se,
        "ci": {a: tuple(b) for a, b in est.ci.items()}, "error": None,
    }


def _failure(method, h, T, rep, exc) -> dict:
    return {"method": method, "h": h, "T": T, "rep": rep, "theta": float("nan"),
            "variance": float("nan"), "se": float("nan"), "ci": {},
            "error": f"{type(exc).__name__}: {exc}"}


def run_replication(cfg: StudyConfig, specs: dict, T: int, rep: int) -> list[dict]:
    """All methods and horizons on the data of one replication."""
    seed = cfg.replication_seed(rep)
    out = []
    if cfg.scenario == "one-sample":
        panel = simulate_panel(cfg.dgp, seed, T=T)
        panels = None
    else:
        half = T // 2
        panels = [simulate_panel(cfg.dgp, derive_seed(seed, k), T=half) for k in (1, 2)]
    for h in cfg.horizons:
        lc = LearnerConfig(**specs[h])
        fit_seed = derive_seed(seed, 1000 + h)
        if panels is None:
            sample = build_horizon_sample(panel, h)
        else:
            s1, s2 = (build_horizon_sample(p, h) for p in panels)
            sample = HorizonSample(
                h, np.arange(len(s1) + len(s2)), np.concatenate([s1.y_fwd, s2.y_fwd]),
                np.concatenate([s1.d, s2.d]), np.vstack([s1.x, s2.x]), s1.codes,
            )
        dml = None
        if "DML" in cfg.methods or "RAc" in cfg.methods:
            try:
                if panels is None:
                    plan = make_split_plan(len(sample), cfg.K, cfg.k_T, cfg.gap_side)
                    dml = dml_estimate(sample, plan, lc, seed=fit_seed)
                else:
                    dml = dml_estimate_two_samples(s1, s2, lc, seed=fit_seed)
            except TsdmlError as exc:
                for m in ("DML", "RAc"):
                    if m in cfg.methods:
                        out.append(_failure(m, h, T, rep, exc))
        if dml is not None:
            if "DML" in cfg.methods:
                out.append(_record("DML", h, T, rep, estimate_irf(dml, cfg.alphas)))
            if "RAc" in cfg.methods:
                out.append(_record("RAc", h, T, rep, ra_from_crossfit(dml, cfg.alphas)))
        if "RA" in cfg.methods:
            try:
                out.append(_record("RA", h, T, rep, regression_adjustment(
                    sample, lc, None, seed=fit_seed, alphas=cfg.alphas)))
            except TsdmlError as exc:
                out.append(_failure("RA", h, T, rep, exc))
        if "LP" in cfg.methods:
            try:
                out.append(_record("LP", h, T, rep, local_projection(sample, alphas=cfg.alphas)))
            except TsdmlError as exc:
                out.append(_failure("LP", h, T, rep, exc))
    return out


@dataclass
class StudyResult:
    """Per-replication estimates plus the truth, tuned specs and failures."""

    config: StudyConfig
    truth: dict[int, float]
    records: list[dict]
    specs: dict
    tuning: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.records if r["error"] is not None]

    def estimates(self, method: str, h: int, T: int) -> list[dict]:
        return [r for r in self.records
                if r["method"] == method and r["h"] == h and r["T"] == T and r["error"] is None]

    def to_json(self) -> str:
        return json.dumps({
            "fingerprint": config_fingerprint(self.config),
            "truth": {str(h): v for h, v in self.truth.items()},
            "specs": {str(h): {k: _spec_dict(v) for k, v in roles.items()}
                      for h, roles in self.specs.items()},
            "tuning": self.tuning,
            "records": [{**r, "ci": {str(a): list(b) for a, b in r["ci"].items()}}
                        for r in self.records],
        }, default=str)

    @classmethod
    def from_json(cls, text: str, config: StudyConfig) -> "StudyResult":
        """Rebuild a result saved by :meth:`to_json`; the stored fingerprint
        must match ``config``."""
        d = json.loads(text)
        if d["fingerprint"] != config_fingerprint(config):
            raise TsdmlError("stored study was produced by a different configuration")
        records = [{**r, "ci": {float(a): tuple(b) for a, b in r["ci"].items()}}
                   for r in d["records"]]
        specs = {int(h): {k: spec_from_dict(v) for k, v in roles.items()}
                 for h, roles in d["specs"].items()}
        truth = {int(h): v for h, v in d["truth"].items()}
        return cls(config, truth, records, specs, d["tuning"])

    def table(self) -> list[dict]:
        """One row per (method, h, T) with bias, std, RMSE and coverage."""
        rows = []
        for T in self.config.T_list:
            for method in self.config.methods:
                for h in self.config.horizons:
                    recs = self.estimates(method, h, T)
                    n_fail = sum(1 for r in self.records if r["method"] == method
                                 and r["h"] == h and r["T"] == T and r["error"] is not None)
                    if not recs:
                        if n_fail:
                            rows.append({"method": method, "h": h, "T": T, "truth": self.truth[h],
                                         "missing": n_fail, "n": 0, "mean": math.nan,
                                         "bias": math.nan, "std": math.nan, "rmse": math.nan,
                                         "coverage": {}})
                        continue
                    m = metrics([r["theta"] for r in recs], self.truth[h],
                                [r["ci"] for r in recs])
                    rows.append({"method": method, "h": h, "T": T, "truth": self.truth[h],
                                 "missing": n_fail, **m})
        return rows


def run_study(cfg: StudyConfig, progress=None) -> StudyResult:
    """Tune (unless ``cfg.specs`` is given), then run N replications per T.

    Replications run in parallel over ``cfg.threads`` workers; each has its
    own seed, and records are sorted by (T, replication) before
    aggregation, so results do not depend on the thread count.
    """
    if cfg.specs is not None:
        specs, tuning = cfg.specs, {"fixed": True}
    else:
        specs, tuning = tune_study(cfg)
    ti = true_irf(cfg.dgp, cfg.horizons, n_draws=cfg.truth_draws)
    jobs = [(T, i) for T in cfg.T_list for i in range(cfg.N)]
    parallel = Parallel(n_jobs=cfg.threads, backend="loky" if cfg.threads > 1 else "sequential")
    chunks = parallel(delayed(run_replication)(cfg, specs, T, i) for T, i in jobs)
    records = []
    for (T, i), recs in sorted(zip(jobs, chunks), key=lambda z: z[0]):
        records.extend(recs)
        if progress is not None:
            progress(T, i)
    return StudyResult(cfg, dict(ti.theta), records, specs, tuning)
