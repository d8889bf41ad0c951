import json
import textwrap

import numpy as np
import pytest

from tsdml.cli import (
    DataConfig,
    fmt,
    ingest_csv,
    load_config,
    main,
    read_result_csv,
    write_panel_csv,
)
from tsdml.core import Panel, TsdmlError, build_horizon_sample
from tsdml.crossfit import LearnerConfig, dml_estimate, estimate_irf, make_split_plan
from tsdml.dgp import DgpConfig, simulate_panel
from tsdml.learners import ForestSpec


def write(path, text):
    path.write_text(textwrap.dedent(text).lstrip())
    return path


@pytest.fixture
def panel_csv(tmp_path):
    panel = simulate_panel(DgpConfig(), 3, T=400)
    panel = Panel(panel.y, panel.d, panel.x, feature_names=tuple(f"x{j + 1}" for j in range(12)))
    path = tmp_path / "panel.csv"
    write_panel_csv(panel, path)
    return panel, path


def config(tmp_path, csv_path, extra=""):
    feats = ",".join(f"x{j + 1}" for j in range(12))
    return write(tmp_path / "run.ini", f"""
        [data]
        path = {csv_path}
        time = t
        outcome = y
        treatment = d
        features = {feats}

        [estimate]
        horizons = 0,1
        k_folds = 2
        gap = 20

        [forest]
        n_trees = 12
        max_depth = 6
        {extra}
    """)


def test_lag_construction(tmp_path):
    p = write(tmp_path / "a.csv", """
        date,y,d,x
        2001,1.0,0,5
        2002,2.0,1,6
        2003,3.0,0,7
    """)
    panel, info = ingest_csv(p, DataConfig(str(p), "date", "y", "d", ["x"], {"y": 1}))
    assert panel.T == 2
    assert panel.feature_names == ("x", "y_lag1")
    assert panel.x.tolist() == [[6.0, 1.0], [7.0, 2.0]]
    assert panel.timestamps == ("2002", "2003")
    assert info.dropped_rows == 1


def test_multilevel_coding(tmp_path):
    rows = "\n".join(f"{i},{i * 0.1},{v},{i % 3}" for i, v in enumerate([-0.25, 0, 0.25, 0, -0.25, 0.25]))
    p = write(tmp_path / "b.csv", "t,y,rate,x\n" + rows + "\n")
    panel, info = ingest_csv(p, DataConfig(str(p), "t", "y", "rate", ["x"], baseline=0.0))
    assert info.value_map == {-0.25: 0, 0.0: 1, 0.25: 2}
    assert info.baseline_code == 1
    assert panel.codes == (0, 1, 2)
    assert panel.d.tolist() == [0, 1, 2, 1, 0, 2]


def test_parse_error_names_row_and_column(tmp_path):
    lines = ["t,y,d,cpi"] + [f"{i},1.5,{i % 2},2.0" for i in range(10)]
    lines[6] = "5,1.5,1,abc"
    p = write(tmp_path / "c.csv", "\n".join(lines) + "\n")
    with pytest.raises(TsdmlError, match=r"row 7, column 'cpi'"):
        ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["cpi"]))


def test_ingest_errors(tmp_path):
    p = write(tmp_path / "d.csv", "t,y,d,x\n1,1,0,1\n2,1,2,1\n3,1,1,1\n")
    with pytest.raises(TsdmlError, match="unknown treatment value"):
        ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["x"], levels=[0.0, 1.0]))
    with pytest.raises(TsdmlError, match="too few"):
        ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["x"]), min_rows=5)
    with pytest.raises(TsdmlError, match="not found"):
        ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["cpi"]))
    with pytest.raises(TsdmlError, match="baseline"):
        ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["x"], baseline=5.0))


def test_scientific_notation_and_exact_roundtrip(panel_csv, tmp_path):
    panel, path = panel_csv
    back, _ = ingest_csv(path, DataConfig(str(path), "t", "y", "d", [f"x{j + 1}" for j in range(12)]))
    assert np.array_equal(back.y, panel.y)
    assert np.array_equal(back.x, panel.x)
    assert np.array_equal(back.d, panel.d)
    assert float(fmt(1e-300)) == 1e-300
    p = write(tmp_path / "e.csv", "t,y,d,x\n1,1e-3,0,-2.5E+2\n2,.5,1,3.\n3,+4,0,1\n")
    q, _ = ingest_csv(p, DataConfig(str(p), "t", "y", "d", ["x"]))
    assert q.y.tolist() == [0.001, 0.5, 4.0]
    assert q.x[:, 0].tolist() == [-250.0, 3.0, 1.0]


def test_estimate_matches_library(panel_csv, tmp_path):
    panel, path = panel_csv
    cfg = config(tmp_path, path)
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "5"]) == 0
    rows = read_result_csv(tmp_path / "o" / "results.csv")
    assert [r["h"] for r in rows] == ["0", "1"]
    lc = LearnerConfig.uniform(ForestSpec(n_trees=12, max_depth=6),
                               ForestSpec(n_trees=12, max_depth=6, max_features="sqrt"))
    for h, row in zip((0, 1), rows):
        s = build_horizon_sample(panel, h)
        res = dml_estimate(s, make_split_plan(len(s), 2, 20, "train"), lc, seed=5 + 1000 * h)
        est = estimate_irf(res)
        assert row["theta"] == fmt(est.theta)
        assert row["variance"] == fmt(est.variance)
        assert row["ci95_lo"] == fmt(est.ci[0.05][0])
    assert (tmp_path / "o" / "results.csv").read_text().startswith("tsdml_result_v1\n")
    events = [json.loads(line) for line in (tmp_path / "o" / "diagnostics.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "ingest"
    assert any(e["event"] == "fold" for e in events)


def test_outputs_independent_of_threads(panel_csv, tmp_path):
    _, path = panel_csv
    cfg = config(tmp_path, path, "")
    for k in (1, 2):
        assert main(["estimate", "--config", str(cfg), "--baselines", "--threads", str(k),
                     "--out", str(tmp_path / f"t{k}")]) == 0
    for name in ("results.csv", "scores.csv", "diagnostics.jsonl"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()
    methods = [r["method"] for r in read_result_csv(tmp_path / "t1" / "results.csv")]
    assert methods == ["DML", "RAc", "RA", "LP"] * 2


def _multilevel_csv(tmp_path, T, levels, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, 3))
    cut = np.digitize(x[:, 0] + rng.standard_normal(T), [-0.6, 0.6] if len(levels) == 3 else [0.0])
    d = np.asarray(levels)[cut]
    y = x[:, 1] + 0.5 * d + 0.2 * rng.standard_normal(T)
    lines = ["t,y,d,a,b,c"] + [f"{t},{fmt(y[t])},{fmt(d[t])},{fmt(x[t, 0])},{fmt(x[t, 1])},{fmt(x[t, 2])}"
                               for t in range(T)]
    p = tmp_path / "ml.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_multilevel_two_rows_per_horizon(tmp_path):
    p = _multilevel_csv(tmp_path, 400, [-1.0, 0.0, 1.0])
    cfg = write(tmp_path / "ml.ini", f"""
        [data]
        path = {p}
        features = a,b,c
        [treatment]
        levels = -1,0,1
        baseline = 0
        [estimate]
        horizons = 0,1
        gap = 5
        [forest]
        n_trees = 20
        max_depth = 6
    """)
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_result_csv(tmp_path / "o" / "results.csv")
    assert [(r["h"], r["contrast"]) for r in rows] == [
        ("0", "-1 vs 0"), ("0", "1 vs 0"), ("1", "-1 vs 0"), ("1", "1 vs 0")]
    assert float(rows[0]["theta"]) < 0 < float(rows[1]["theta"])


def test_many_folds_short_panel(tmp_path):
    p = _multilevel_csv(tmp_path, 234 + 2, [0.0, 1.0], seed=1)
    cfg = write(tmp_path / "k10.ini", f"""
        [data]
        path = {p}
        features = a,b,c
        lags = y:2
        [estimate]
        horizons = 0
        k_folds = 10
        gap = 24
        [forest]
        n_trees = 10
    """)
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    events = [json.loads(line) for line in (tmp_path / "o" / "diagnostics.jsonl").read_text().splitlines()]
    assert events[0]["T"] == 234
    folds = [e for e in events if e["event"] == "fold"]
    assert len(folds) == 10
    assert all(set(f["train_arm_counts"]) == {"0", "1"} for f in folds)


def test_short_gap_needs_override(panel_csv, tmp_path, capsys):
    _, path = panel_csv
    cfg = config(tmp_path, path)
    assert main(["estimate", "--config", str(cfg), "--gap", "0", "--out", str(tmp_path / "o")]) == 1
    assert "allow-short-gap" in capsys.readouterr().err
    assert main(["estimate", "--config", str(cfg), "--gap", "1", "--allow-short-gap",
                 "--out", str(tmp_path / "o")]) == 0


def test_unknown_scenario_is_usage_error(tmp_path, capsys):
    cfg = write(tmp_path / "s.ini", "[study]\nscenario = three-sample\n")
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "one-sample" in err and "two-sample" in err


@pytest.mark.parametrize("scenario", ["one-sample", "two-sample"])
def test_simulate_smoke(tmp_path, scenario):
    cfg = write(tmp_path / "sim.ini", f"""
        [study]
        scenario = {scenario}
        horizons = 0,1
        T = 300
        N = 2
        R = 1
        k_T = 10
        n_trees = 5
        truth_draws = 100000
        tune_T = 200
    """)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    table = read_result_csv(tmp_path / "o" / "study_table.csv")
    assert len(table) == 8
    assert all(r["n"] == "2" and r["bias"] != "nan" for r in table)
    reps = read_result_csv(tmp_path / "o" / "replications.csv")
    assert len(reps) == 16


def test_true_irf_command(tmp_path):
    cfg = write(tmp_path / "g.ini", "[dgp]\ngamma = 0\ndraws = 200000\n")
    assert main(["true-irf", "--config", str(cfg), "--horizons", "0,1,2", "--out", str(tmp_path)]) == 0
    rows = read_result_csv(tmp_path / "true_irf.csv")
    assert float(rows[0]["theta"]) == pytest.approx(0.3321, abs=0.005)
    assert [float(r["theta"]) for r in rows[1:]] == [0.0, 0.0]


def test_true_irf_defaults(tmp_path):
    assert main(["true-irf", "--out", str(tmp_path)]) == 0
    assert float(read_result_csv(tmp_path / "true_irf.csv")[0]["theta"]) == pytest.approx(0.3321, abs=0.001)
    cfg = write(tmp_path / "n20.ini", "[dgp]\nn = 20\n")
    assert main(["true-irf", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert float(read_result_csv(tmp_path / "true_irf.csv")[0]["theta"]) == pytest.approx(0.3333, abs=0.001)


def test_generate_then_estimate(tmp_path):
    cfg = write(tmp_path / "gen.ini", "[dgp]\nT = 300\n")
    assert main(["generate", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path)]) == 0
    panel, _ = ingest_csv(tmp_path / "panel.csv",
                          DataConfig(str(tmp_path / "panel.csv"), "t", "y", "d",
                                     [f"x{j + 1}" for j in range(12)]))
    direct = simulate_panel(DgpConfig(T=300), 4)
    assert np.array_equal(panel.y, direct.y) and np.array_equal(panel.x, direct.x)


def test_flags_override_file(tmp_path):
    cfg = write(tmp_path / "f.ini", "[estimate]\nhorizons = 0\nk_folds = 3\ngap = 7\n[run]\nseed = 1\n")
    from tsdml.cli import build_parser
    args = build_parser().parse_args(["estimate", "--config", str(cfg), "--k-folds", "5", "--seed", "9"])
    rc = load_config(args.config, args)
    assert (rc.k_folds, rc.gap, rc.seed) == (5, 7, 9)
    with pytest.raises(TsdmlError, match="not found"):
        load_config(str(tmp_path / "missing.ini"))


def test_readme_config_example_parses(tmp_path):
    import re
    from pathlib import Path

    readme = (Path(__file__).parent.parent / "README.md").read_text()
    block = re.search(r"```ini\n(.*?)```", readme, re.S).group(1)
    cfg = write(tmp_path / "readme.ini", block)
    rc = load_config(str(cfg))
    assert rc.data.features == ["spread", "cpi", "unemployment"]
    assert rc.data.lags == {"y": 2, "cpi": 1}
    assert rc.data.levels == [-0.25, 0.0, 0.25] and rc.data.baseline == 0.0
    assert (rc.k_folds, rc.gap, rc.gap_side, rc.bandwidth) == (10, 24, "train", None)
    assert rc.forest.max_depth is None and rc.propensity_forest.max_features == "sqrt"
    assert rc.tune and rc.tune_gap == 24
    assert rc.dgp == DgpConfig()
    assert rc.true_irf_draws == 10**7
    assert rc.study["scenario"] == "one-sample"
