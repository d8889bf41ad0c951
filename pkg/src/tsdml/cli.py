"""Command-line front end.

Commands read a plain INI file (``--config``); flags override file values.
See the README for every section and key.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .baselines import local_projection, ra_from_crossfit, regression_adjustment
from .core import Panel, TsdmlError, build_horizon_sample, validate_panel
from .crossfit import (
    GAP_SIDES,
    LearnerConfig,
    MultiLevelLearnerConfig,
    dml_estimate,
    dml_estimate_multilevel,
    estimate_irf,
    make_split_plan,
)
from .dgp import DgpConfig, simulate_panel, true_irf
from .learners import (
    EMPIRICAL_BOOST_ROUNDS,
    LEARNING_RATES,
    BoostSpec,
    ForestSpec,
    blocked_cv_splits,
    boost_stage1_grid,
    empirical_forest_grid,
    simulation_forest_grid,
    tune_boosting_cv,
    tune_grid,
)
from .mc import METHODS, SCENARIOS, StudyConfig, run_study, tune_study

__all__ = [
    "SCHEMA",
    "DataConfig",
    "RunConfig",
    "ingest_csv",
    "write_panel_csv",
    "load_config",
    "cmd_estimate",
    "cmd_simulate",
    "cmd_true_irf",
    "cmd_tune",
    "cmd_generate",
    "main",
]

SCHEMA = "tsdml_result_v1"
_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_HARD = ("sample too short", "non-finite", "unknown treatment", "not strictly increasing",
         "no confounder")


def fmt(v) -> str:
    """17 significant digits for floats, plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def parse_number(text: str, line: int, column: str) -> float:
    s = text.strip()
    if not _NUMBER.match(s):
        raise TsdmlError(f"row {line}, column '{column}': cannot parse {text!r} as a number")
    return float(s)


@dataclass
class DataConfig:
    """Which CSV columns hold what, plus lags and treatment coding.

    ``lags`` maps a column to a lag count k (lags 1..k are appended as
    ``<col>_lag<j>``). ``levels`` lists the admissible treatment values;
    when empty they are inferred from the data. ``baseline`` defaults to the
    smallest level.
    """

    path: str = ""
    time: str = "t"
    outcome: str = "y"
    treatment: str = "d"
    features: list[str] = field(default_factory=list)
    lags: dict[str, int] = field(default_factory=dict)
    levels: list[float] = field(default_factory=list)
    baseline: float | None = None


@dataclass
class IngestInfo:
    value_map: dict[float, int]
    baseline_code: int
    max_lag: int
    dropped_rows: int
    warnings: list[str]


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TsdmlError(f"{path}: empty file, header row required") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if r]
    return header, rows


def ingest_csv(path, dc: DataConfig, min_rows: int = 0) -> tuple[Panel, IngestInfo]:
    """Read a CSV into a :class:`Panel`.

    Cells must be decimal numbers (period separator, optional exponent).
    Errors name the file row (the header is row 1) and column. Requested
    lag columns are appended and the first max-lag rows dropped; the time
    column is kept as metadata and the index renumbered 0..T-1.
    """
    header, rows = _read_rows(path)
    needed = [dc.time, dc.outcome, dc.treatment, *dc.features, *dc.lags]
    missing = [c for c in dict.fromkeys(needed) if c not in header]
    if missing:
        raise TsdmlError(f"{path}: columns not found: {missing}")
    if not dc.features:
        raise TsdmlError("at least one feature column is required")
    col = {name: header.index(name) for name in header}
    numeric = list(dict.fromkeys([dc.outcome, dc.treatment, *dc.features, *dc.lags]))
    values = {c: np.empty(len(rows)) for c in numeric}
    stamps = []
    for k, (line, r) in enumerate(rows):
        if len(r) != len(header):
            raise TsdmlError(f"row {line}: expected {len(header)} fields, found {len(r)}")
        for c in numeric:
            values[c][k] = parse_number(r[col[c]], line, c)
        stamps.append(r[col[dc.time]].strip())

    raw_d = values[dc.treatment]
    levels = sorted(set(dc.levels)) if dc.levels else sorted(set(raw_d.tolist()))
    if len(levels) < 2:
        raise TsdmlError(f"treatment column '{dc.treatment}' needs at least 2 levels")
    value_map = {v: i for i, v in enumerate(levels)}
    codes = np.empty(len(rows), dtype=np.int64)
    for k, v in enumerate(raw_d):
        if v not in value_map:
            raise TsdmlError(
                f"row {rows[k][0]}, column '{dc.treatment}': unknown treatment value "
                f"{fmt(v)} (declared {[fmt(x) for x in levels]})"
            )
        codes[k] = value_map[v]
    baseline = levels[0] if dc.baseline is None else float(dc.baseline)
    if baseline not in value_map:
        raise TsdmlError(f"baseline {fmt(baseline)} is not a declared treatment level")

    max_lag = max(dc.lags.values(), default=0)
    T = len(rows) - max_lag
    if T < max(min_rows, 2):
        raise TsdmlError(
            f"{len(rows)} rows are too few: need lags ({max_lag}) + max horizon + 2 = "
            f"{max_lag + max(min_rows, 2)}"
        )
    cols = [values[c][max_lag:] for c in dc.features]
    names = list(dc.features)
    for c, k in dc.lags.items():
        for j in range(1, k + 1):
            cols.append(values[c][max_lag - j: len(rows) - j])
            names.append(f"{c}_lag{j}")
    panel = Panel(
        values[dc.outcome][max_lag:], codes[max_lag:], np.column_stack(cols),
        codes=tuple(range(len(levels))), feature_names=tuple(names),
        timestamps=tuple(stamps[max_lag:]),
    )
    problems = validate_panel(panel)
    hard = [p for p in problems if any(p.startswith(h) or h in p for h in _HARD)]
    if hard:
        raise TsdmlError("invalid panel: " + "; ".join(hard[:5]))
    info = IngestInfo(value_map, value_map[baseline], max_lag, max_lag,
                      [p for p in problems if p not in hard])
    return panel, info


def write_panel_csv(panel: Panel, path, time_name: str = "t", outcome: str = "y",
                    treatment: str = "d") -> None:
    """Write a panel so that :func:`ingest_csv` reproduces it exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([time_name, outcome, treatment, *panel.feature_names])
        stamps = panel.timestamps or tuple(range(panel.T))
        for t in range(panel.T):
            w.writerow([stamps[t], fmt(panel.y[t]), int(panel.d[t]),
                        *(fmt(v) for v in panel.x[t])])


def _list(text: str, conv=str) -> list:
    return [conv(p.strip()) for p in text.split(",") if p.strip()]


def _depth(text: str):
    return None if text.strip().lower() in ("none", "inf", "") else int(text)


def _max_features(text: str):
    t = text.strip()
    if t in ("all", "sqrt", "log2"):
        return t
    return float(t) if "." in t else int(t)


def _bool(text: str) -> bool:
    return configparser.ConfigParser.BOOLEAN_STATES[text.strip().lower()]


@dataclass
class RunConfig:
    """Merged settings from the config file and command-line flags."""

    data: DataConfig = field(default_factory=DataConfig)
    horizons: list[int] = field(default_factory=lambda: [0])
    k_folds: int = 2
    gap: int = 20
    gap_side: str = "train"
    eta: float = 0.01
    alphas: list[float] = field(default_factory=lambda: [0.05, 0.01])
    bandwidth: int | None = None
    baselines: bool = False
    allow_short_gap: bool = False
    learner: str = "forest"
    forest: ForestSpec = field(default_factory=ForestSpec)
    propensity_forest: ForestSpec = field(default_factory=lambda: ForestSpec(max_features="sqrt"))
    boost: BoostSpec = field(default_factory=lambda: BoostSpec(early_stop_patience=None))
    tune: bool = False
    tune_grid: str = "empirical"
    tune_folds: int = 10
    tune_gap: int | None = None
    tune_overrides: dict = field(default_factory=dict)
    out: str = "tsdml_out"
    seed: int = 0
    threads: int = 1
    dgp: DgpConfig = field(default_factory=DgpConfig)
    true_irf_draws: int = 10_000_000
    study: dict = field(default_factory=dict)
    paper_scale: bool = False


_DGP_INT = {"n", "T", "ma_order", "p", "q", "burn_in", "rng_seed"}
_DGP_FLOAT = {"gamma", "sigma_eps", "d_y", "sigma_u2", "alpha_A", "alpha_M", "rho_A",
              "rho_M", "tau_scale"}


def load_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Parse the INI file (if any) and apply flag overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    base = Path(".")
    if path:
        if not Path(path).exists():
            raise TsdmlError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
        base = Path(path).resolve().parent
    rc = RunConfig()

    if cp.has_section("data"):
        s = cp["data"]
        dc = rc.data
        if "path" in s:
            p = Path(s["path"])
            dc.path = str(p if p.is_absolute() else base / p)
        dc.time = s.get("time", dc.time)
        dc.outcome = s.get("outcome", dc.outcome)
        dc.treatment = s.get("treatment", dc.treatment)
        dc.features = _list(s.get("features", ""))
        for item in _list(s.get("lags", "")):
            name, _, k = item.partition(":")
            dc.lags[name.strip()] = int(k) if k else 1
    if cp.has_section("treatment"):
        s = cp["treatment"]
        if "levels" in s:
            rc.data.levels = _list(s["levels"], float)
        if "baseline" in s:
            rc.data.baseline = float(s["baseline"])
    if cp.has_section("estimate"):
        s = cp["estimate"]
        rc.horizons = _list(s.get("horizons", "0"), int)
        rc.k_folds = s.getint("k_folds", rc.k_folds)
        rc.gap = s.getint("gap", rc.gap)
        rc.gap_side = s.get("gap_side", rc.gap_side)
        rc.eta = s.getfloat("eta", rc.eta)
        rc.alphas = _list(s.get("alphas", "0.05,0.01"), float)
        bw = s.get("bandwidth", "auto").strip()
        rc.bandwidth = None if bw == "auto" else int(bw)
        rc.baselines = s.getboolean("baselines", rc.baselines)
        rc.allow_short_gap = s.getboolean("allow_short_gap", rc.allow_short_gap)
    if cp.has_section("forest"):
        s = cp["forest"]
        kw = {}
        if "n_trees" in s:
            kw["n_trees"] = s.getint("n_trees")
        if "max_depth" in s:
            kw["max_depth"] = _depth(s["max_depth"])
        if "min_leaf" in s:
            kw["min_leaf"] = s.getint("min_leaf")
        if "bootstrap" in s:
            kw["bootstrap"] = s.getboolean("bootstrap")
        rc.forest = replace(rc.forest, **kw)
        if "max_features" in s:
            rc.forest = replace(rc.forest, max_features=_max_features(s["max_features"]))
        rc.propensity_forest = replace(
            rc.forest, max_features=_max_features(s.get("propensity_max_features", "sqrt")))
    if cp.has_section("boosting"):
        s = cp["boosting"]
        kw = {}
        for k in ("learning_rate", "min_child_weight", "subsample", "colsample"):
            if k in s:
                kw[k] = s.getfloat(k)
        for k in ("n_rounds", "max_depth"):
            if k in s:
                kw[k] = s.getint(k)
        rc.boost = replace(rc.boost, **kw)
    if cp.has_section("tune"):
        s = cp["tune"]
        rc.tune = s.getboolean("enabled", True)
        rc.tune_grid = s.get("grid", rc.tune_grid)
        rc.tune_folds = s.getint("cv_folds", rc.tune_folds)
        if "cv_gap" in s:
            rc.tune_gap = s.getint("cv_gap")
        for k in ("max_depth", "min_leaf", "max_features", "min_child_weight",
                  "subsample", "colsample", "learning_rates", "rounds"):
            if k in s:
                rc.tune_overrides[k] = s[k]
    if cp.has_section("output"):
        rc.out = str(base / cp["output"].get("dir", rc.out))
    if cp.has_section("run"):
        s = cp["run"]
        rc.seed = s.getint("seed", rc.seed)
        rc.threads = s.getint("threads", rc.threads)
        rc.learner = s.get("learner", rc.learner)
    if cp.has_section("dgp"):
        kw = {}
        for k, v in cp["dgp"].items():
            if k in _DGP_INT:
                kw[k] = int(v)
            elif k in _DGP_FLOAT:
                kw[k] = float(v)
            elif k == "ar":
                kw[k] = tuple(_list(v, float))
            elif k == "draws":
                rc.true_irf_draws = int(float(v))
            else:
                raise TsdmlError(f"unknown [dgp] key '{k}'")
        rc.dgp = DgpConfig(**kw)
    if cp.has_section("study"):
        rc.study = dict(cp["study"])

    if args is not None:
        if getattr(args, "seed", None) is not None:
            rc.seed = args.seed
        if getattr(args, "horizons", None):
            rc.horizons = _list(args.horizons, int)
        if getattr(args, "k_folds", None) is not None:
            rc.k_folds = args.k_folds
        if getattr(args, "gap", None) is not None:
            rc.gap = args.gap
        if getattr(args, "learner", None):
            rc.learner = args.learner
        if getattr(args, "baselines", False):
            rc.baselines = True
        if getattr(args, "paper_scale", False):
            rc.paper_scale = True
        if getattr(args, "out", None):
            rc.out = args.out
        if getattr(args, "threads", None) is not None:
            rc.threads = args.threads
        if getattr(args, "allow_short_gap", False):
            rc.allow_short_gap = True
    if rc.gap_side not in GAP_SIDES:
        raise TsdmlError(f"gap_side must be one of {GAP_SIDES}")
    if rc.learner not in ("forest", "boosting"):
        raise TsdmlError(f"learner must be forest or boosting, got {rc.learner!r}")
    if rc.threads < 1:
        raise TsdmlError("threads must be >= 1")
    return rc


class _Log:
    """JSON-lines diagnostics, written in a deterministic order."""

    def __init__(self):
        self.events: list[dict] = []

    def add(self, event: str, **payload):
        self.events.append({"event": event, **payload})

    def write(self, path: Path):
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.events:
                fh.write(json.dumps(e, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (ForestSpec, BoostSpec)):
        return asdict(o)
    return str(o)


def _ci_label(alpha: float) -> str:
    return f"ci{fmt(round((1 - alpha) * 100, 6))}"


def _result_header(alphas) -> list[str]:
    cols = ["method", "h", "contrast", "theta", "variance", "se", "effective_count"]
    for a in alphas:
        lab = _ci_label(a)
        cols += [f"{lab}_lo", f"{lab}_hi"]
    return cols + ["bandwidth", "n_clipped", "clip_rate"]


def _result_row(est, contrast: str, alphas) -> list[str]:
    d = est.diagnostics
    row = [est.method, str(est.h), contrast, fmt(est.theta), fmt(est.variance),
           fmt(est.se), str(est.effective_count)]
    for a in alphas:
        lo, hi = est.ci[a]
        row += [fmt(lo), fmt(hi)]
    row += [";".join(str(b) for b in est.bandwidths), str(d.get("n_clipped", 0)),
            fmt(float(d.get("clip_rate", 0.0)))]
    return row


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_result_csv(path) -> list[dict]:
    """Read a ``tsdml_result_v1`` file back into a list of row dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != SCHEMA:
            raise TsdmlError(f"{path}: expected schema line {SCHEMA!r}, found {first!r}")
        return list(csv.DictReader(fh))


def _forest_grid(rc: RunConfig, role: str) -> list[ForestSpec]:
    n_trees = rc.forest.n_trees
    if rc.tune_grid == "simulation":
        grid = simulation_forest_grid(n_trees, "sqrt" if role == "e" else "all")
    else:
        grid = empirical_forest_grid(n_trees)
    o = rc.tune_overrides
    if any(k in o for k in ("max_depth", "min_leaf", "max_features")):
        depths = _list(o["max_depth"], _depth) if "max_depth" in o else sorted(
            {g.max_depth for g in grid}, key=lambda v: (v is None, v or 0))
        leaves = _list(o["min_leaf"], int) if "min_leaf" in o else sorted({g.min_leaf for g in grid})
        feats = _list(o["max_features"], _max_features) if "max_features" in o else list(
            dict.fromkeys(g.max_features for g in grid))
        grid = [ForestSpec(n_trees=n_trees, max_depth=d, min_leaf=l, max_features=m)
                for d, l, m in product(depths, leaves, feats)]
    return grid


def _boost_grids(rc: RunConfig):
    o = rc.tune_overrides
    stage1 = boost_stage1_grid(n_rounds=500, patience=None)
    if any(k in o for k in ("max_depth", "min_child_weight", "subsample", "colsample")):
        ds = _list(o.get("max_depth", "1,2,3,4,5,6,7,8,9,10"), int)
        ws = _list(o.get("min_child_weight", "1,2,3,4,5,6,7,8,9,10"), float)
        so = _list(o.get("subsample", "0.25,0.5,0.75,1"), float)
        sf = _list(o.get("colsample", "0.25,0.5,0.75,1"), float)
        stage1 = [BoostSpec(learning_rate=0.1, n_rounds=500, max_depth=d, min_child_weight=w,
                            subsample=a, colsample=b, early_stop_patience=None)
                  for d, w, a, b in product(ds, ws, so, sf)]
    lrs = _list(o["learning_rates"], float) if "learning_rates" in o else list(LEARNING_RATES)
    rounds = _list(o["rounds"], int) if "rounds" in o else list(EMPIRICAL_BOOST_ROUNDS)
    return stage1, lrs, rounds


def _restrict_splits(splits, mask):
    pos = np.cumsum(mask) - 1
    out = []
    for tr, va in splits:
        tr, va = tr[mask[tr]], va[mask[va]]
        if len(tr) and len(va):
            out.append((pos[tr], pos[va]))
    return out


def _tune_role(rc: RunConfig, x, y, splits, task, classes=None, role="mu"):
    if rc.learner == "forest":
        res = tune_grid(task, _forest_grid(rc, role), x, y, splits, classes=classes)
        return res.best
    stage1, lrs, rounds = _boost_grids(rc)
    spec, _ = tune_boosting_cv(task, x, y, splits, stage1_grid=stage1, learning_rates=lrs,
                               rounds=rounds, classes=classes)
    return spec


def _learners(rc: RunConfig, sample, multilevel: bool, log: _Log | None):
    """Nuisance learner specs for one horizon, tuned by blocked CV if asked."""
    if rc.learner == "forest":
        out_spec, prop_spec = rc.forest, rc.propensity_forest
    else:
        out_spec = prop_spec = rc.boost
    if not rc.tune:
        return (MultiLevelLearnerConfig(out_spec, prop_spec) if multilevel
                else LearnerConfig.uniform(out_spec, prop_spec))
    gap = rc.gap if rc.tune_gap is None else rc.tune_gap
    splits = blocked_cv_splits(len(sample), rc.tune_folds, gap)
    codes = tuple(sample.codes)
    if multilevel:
        dummies = np.column_stack([(sample.d == c).astype(float) for c in codes[1:]])
        mu = _tune_role(rc, np.hstack([sample.x, dummies]), sample.y_fwd, splits, "regression")
        e = _tune_role(rc, sample.x, sample.d, splits, "classification", codes, "e")
        chosen = {"mu": mu, "e": e}
        lc = MultiLevelLearnerConfig(mu, e)
    else:
        chosen = {}
        for role, arm in (("mu1", 1), ("mu0", 0)):
            mask = sample.d == arm
            chosen[role] = _tune_role(rc, sample.x[mask], sample.y_fwd[mask],
                                      _restrict_splits(splits, mask), "regression")
        chosen["e"] = _tune_role(rc, sample.x, sample.d, splits, "classification", (0, 1), "e")
        lc = LearnerConfig(**chosen)
    if log is not None:
        log.add("tuned", h=sample.h, specs={k: asdict(v) for k, v in chosen.items()})
    return lc


def _label(value_map: dict, code: int) -> str:
    inv = {c: v for v, c in value_map.items()}
    return fmt(inv[code])


def _estimate_horizon(rc: RunConfig, panel: Panel, info: IngestInfo, h: int):
    log = _Log()
    sample = build_horizon_sample(panel, h)
    plan = make_split_plan(len(sample), rc.k_folds, rc.gap, rc.gap_side)
    binary = len(panel.codes) == 2 and info.baseline_code == 0
    lc = _learners(rc, sample, not binary, log)
    seed = rc.seed + 1000 * h
    rows, dumps, ests = [], [], []
    if binary:
        res = dml_estimate(sample, plan, lc, seed=seed, eta=rc.eta, max_lag=info.max_lag)
        contrast = f"{_label(info.value_map, 1)} vs {_label(info.value_map, 0)}"
        results = [(res, contrast)]
    else:
        results = []
        for res in dml_estimate_multilevel(sample, plan, lc, info.baseline_code, seed=seed,
                                           eta=rc.eta, max_lag=info.max_lag):
            c, b = res.contrast
            results.append((res, f"{_label(info.value_map, c)} vs {_label(info.value_map, b)}"))
    for res, contrast in results:
        est = estimate_irf(res, rc.alphas, rc.bandwidth)
        ests.append((est, contrast))
        for f in res.folds:
            log.add("fold", h=h, contrast=contrast, fold=f.fold, n_eval=f.n,
                    theta=f.theta, train_arm_counts=f.train_arm_counts,
                    eval_arm_counts=f.eval_arm_counts, n_clipped=f.n_clipped)
            dumps += [["DML", str(h), contrast, str(f.fold), str(int(t)), fmt(g)]
                      for t, g in zip(f.t, f.scores)]
        for w in res.diagnostics.get("warnings", []):
            log.add("warning", h=h, message=w)
        if res.diagnostics["clip_rate"] > 0.10:
            msg = (f"propensity clipping affected {res.diagnostics['clip_rate']:.1%} of "
                   f"evaluated indices at h={h} ({contrast}); overlap is weak")
            log.add("warning", h=h, message=msg, severity="high")
        if binary and rc.baselines:
            ests.append((ra_from_crossfit(res, rc.alphas, rc.bandwidth), contrast))
            ests.append((regression_adjustment(sample, lc, None, seed=seed, alphas=rc.alphas,
                                               bandwidth=rc.bandwidth), contrast))
            ests.append((local_projection(sample, control_names=panel.feature_names,
                                          alphas=rc.alphas, bandwidth=rc.bandwidth), contrast))
    for est, contrast in ests:
        rows.append(_result_row(est, contrast, rc.alphas))
        log.add("estimate", h=h, method=est.method, contrast=contrast,
                fold_thetas=est.fold_thetas, fold_counts=est.fold_counts,
                bandwidths=est.bandwidths)
    return rows, dumps, log.events, ests


def run_estimate(rc: RunConfig):
    """Library-level estimate command: returns rows, score dump and log events."""
    if not rc.data.path:
        raise TsdmlError("estimate needs [data] path")
    panel, info = ingest_csv(rc.data.path, rc.data, min_rows=max(rc.horizons) + 2)
    need = max(max(rc.horizons), info.max_lag)
    if rc.gap < need and not rc.allow_short_gap:
        raise TsdmlError(
            f"gap k_T={rc.gap} is below max(h, max lag)={need}; raise --gap or pass "
            f"--allow-short-gap to proceed"
        )
    head = [{"event": "ingest", "T": panel.T, "features": list(panel.feature_names),
             "value_map": {fmt(k): v for k, v in info.value_map.items()},
             "baseline_code": info.baseline_code, "dropped_rows": info.dropped_rows,
             "warnings": info.warnings}]
    parallel = Parallel(n_jobs=rc.threads,
                        backend="loky" if rc.threads > 1 else "sequential")
    parts = parallel(delayed(_estimate_horizon)(rc, panel, info, h) for h in rc.horizons)
    rows, dumps, events = [], [], head
    for r, d, e, _ in parts:
        rows += r
        dumps += d
        events += e
    return rows, dumps, events


def cmd_estimate(rc: RunConfig) -> Path:
    rows, dumps, events = run_estimate(rc)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", _result_header(rc.alphas), rows)
    _write_csv(out / "scores.csv", ["method", "h", "contrast", "fold", "t", "score"], dumps)
    log = _Log()
    log.events = events
    log.write(out / "diagnostics.jsonl")
    for e in events:
        if e.get("severity") == "high":
            print(f"WARNING: {e['message']}", file=sys.stderr)
    return out


def _study_config(rc: RunConfig) -> StudyConfig:
    s = rc.study
    kw = {"dgp": rc.dgp, "seed_base": rc.seed, "threads": rc.threads, "learner": rc.learner,
          "k_T": rc.gap, "K": rc.k_folds}
    if "scenario" in s:
        kw["scenario"] = s["scenario"].strip()
        if kw["scenario"] not in SCENARIOS:
            raise UsageError(f"unknown scenario {kw['scenario']!r}; valid: {', '.join(SCENARIOS)}")
    if "horizons" in s:
        kw["horizons"] = tuple(_list(s["horizons"], int))
    if "T" in s:
        kw["T_list"] = tuple(_list(s["T"], int))
    for k in ("N", "R", "n_trees", "tune_T"):
        if k in s:
            kw[k] = int(s[k])
    if "k_T" in s:
        kw["k_T"] = int(s["k_T"])
    if "K" in s:
        kw["K"] = int(s["K"])
    if "gap_side" in s:
        kw["gap_side"] = s["gap_side"].strip()
    if "methods" in s:
        kw["methods"] = tuple(_list(s["methods"]))
    if "alphas" in s:
        kw["alphas"] = tuple(_list(s["alphas"], float))
    if "truth_draws" in s:
        kw["truth_draws"] = int(float(s["truth_draws"]))
    cfg = StudyConfig(**kw)
    if rc.horizons != [0] and "horizons" not in s:
        cfg = replace(cfg, horizons=tuple(rc.horizons))
    if rc.paper_scale or _bool(s.get("paper_scale", "no")):
        cfg = cfg.paper_scale()
    return cfg


def cmd_simulate(rc: RunConfig) -> Path:
    cfg = _study_config(rc)
    res = run_study(cfg)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    alphas = list(cfg.alphas)
    header = ["method", "h", "T", "truth", "n", "missing", "bias", "std", "rmse"] + [
        f"C{fmt(round((1 - a) * 100, 6))}" for a in alphas]
    rows = [[r["method"], str(r["h"]), str(r["T"]), fmt(r["truth"]), str(r["n"]),
             str(r["missing"]), fmt(r["bias"]), fmt(r["std"]), fmt(r["rmse"])]
            + [fmt(r["coverage"].get(a, float("nan"))) for a in alphas]
            for r in res.table()]
    _write_csv(out / "study_table.csv", header, rows)
    dump_header = ["method", "h", "T", "rep", "theta", "se"]
    for a in alphas:
        dump_header += [f"{_ci_label(a)}_lo", f"{_ci_label(a)}_hi"]
    dump_header.append("error")
    dump = []
    for r in res.records:
        row = [r["method"], str(r["h"]), str(r["T"]), str(r["rep"]), fmt(r["theta"]),
               fmt(r["se"])]
        for a in alphas:
            lo, hi = r["ci"].get(a, (float("nan"), float("nan")))
            row += [fmt(lo), fmt(hi)]
        row.append(r["error"] or "")
        dump.append(row)
    _write_csv(out / "replications.csv", dump_header, dump)
    log = _Log()
    log.add("study", scenario=cfg.scenario, N=cfg.N, T=list(cfg.T_list),
            horizons=list(cfg.horizons), n_trees=cfg.n_trees, seed_base=cfg.seed_base)
    log.add("truth", theta={str(h): v for h, v in res.truth.items()})
    log.add("specs", specs={str(h): {k: asdict(v) for k, v in roles.items()}
                            for h, roles in res.specs.items()})
    for f in res.failures:
        log.add("failure", method=f["method"], h=f["h"], T=f["T"], rep=f["rep"],
                message=f["error"])
    log.write(out / "diagnostics.jsonl")
    return out


def cmd_true_irf(rc: RunConfig) -> Path:
    ti = true_irf(rc.dgp, rc.horizons, n_draws=rc.true_irf_draws, seed=rc.seed)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[str(h), fmt(ti.theta[h]), fmt(ti.mc_se[h]), str(ti.n_draws)] for h in ti.horizons]
    _write_csv(out / "true_irf.csv", ["h", "theta", "mc_se", "n_draws"], rows)
    return out


def cmd_tune(rc: RunConfig) -> Path:
    """Tune nuisance specs: blocked CV on ``[data]`` when given, otherwise
    the simulation protocol for ``[study]``."""
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {}
    if rc.data.path:
        panel, info = ingest_csv(rc.data.path, rc.data, min_rows=max(rc.horizons) + 2)
        binary = len(panel.codes) == 2 and info.baseline_code == 0
        rc = replace(rc, tune=True)
        for h in rc.horizons:
            lc = _learners(rc, build_horizon_sample(panel, h), not binary, None)
            result[str(h)] = {k: asdict(v) for k, v in asdict_shallow(lc).items()}
    else:
        specs, _ = tune_study(_study_config(rc))
        result = {str(h): {k: asdict(v) for k, v in roles.items()} for h, roles in specs.items()}
    (out / "tuned_specs.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    return out


def asdict_shallow(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def cmd_generate(rc: RunConfig) -> Path:
    """Write one simulated panel (``[dgp]`` T and ``--seed``) as CSV."""
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = simulate_panel(rc.dgp, rc.seed)
    write_panel_csv(panel, out / "panel.csv")
    return out


class UsageError(TsdmlError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsdml", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("estimate", "estimate impulse responses from a CSV panel"),
        ("simulate", "run a Monte Carlo study"),
        ("true-irf", "oracle impulse responses of the simulation design"),
        ("tune", "tune nuisance hyperparameters"),
        ("generate", "write one simulated panel as CSV"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--horizons", metavar="LIST", help="comma-separated, e.g. 0,1,3,5")
        sp.add_argument("--k-folds", type=int, metavar="K")
        sp.add_argument("--gap", type=int, metavar="KT")
        sp.add_argument("--learner", choices=("forest", "boosting"))
        sp.add_argument("--baselines", action="store_true", help="also run RA^c, RA and LP")
        sp.add_argument("--paper-scale", action="store_true",
                        help="N=1000 replications and 500 trees")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int, metavar="N")
        sp.add_argument("--allow-short-gap", action="store_true",
                        help="proceed when the gap is below max(h, max lag)")
    return p


_COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "true-irf": cmd_true_irf,
    "tune": cmd_tune,
    "generate": cmd_generate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = load_config(args.config, args)
        out = _COMMANDS[args.command](rc)
    except UsageError as exc:
        parser.error(str(exc))
    except (TsdmlError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
