"""Monte Carlo module examples checked against the cached studies in ``tests/data``."""

import numpy as np
import pytest

import acceptance_studies as studies


def _load(name, cfg):
    res = studies.load(name, cfg)
    if res is None:
        pytest.skip(f"cached study {name} missing; run tests/acceptance_studies.py")
    return res


@pytest.fixture(scope="module")
def study_a():
    return _load("study_a", studies.STUDY_A)


def _row(res, method, h, T):
    return next(r for r in res.table() if (r["method"], r["h"], r["T"]) == (method, h, T))


def test_no_failed_replications(study_a):
    assert study_a.failures == []


def test_one_sample_dml_bias_and_spread_at_h1(study_a):
    r = _row(study_a, "DML", 1, 4000)
    assert r["n"] == 200
    assert r["bias"] <= 0.04
    assert abs(r["std"] / 0.0716 - 1) <= 0.25


def test_one_sample_dml_h0(study_a):
    r = _row(study_a, "DML", 0, 4000)
    assert r["bias"] <= 0.02
    assert 0.90 <= r["coverage"][0.05] <= 0.98
    assert r["coverage"][0.01] >= r["coverage"][0.05]


def test_metric_identity_on_every_cell(study_a):
    for r in study_a.table():
        assert abs(r["rmse"] ** 2 - r["bias"] ** 2 - r["std"] ** 2) <= 1e-10 * r["rmse"] ** 2


def test_ra_bias_exceeds_dml_at_long_tier(study_a):
    c = _load("study_c", studies.study_c(study_a.specs[1]))
    ra, dml = _row(c, "RA", 1, 16000)["bias"], _row(c, "DML", 1, 16000)["bias"]
    assert ra >= 2 * dml


def test_two_sample_long_tier_bias(study_a):
    d = _load("study_d", studies.study_d(study_a.specs[0]))
    r = _row(d, "DML", 0, 16000)
    assert r["n"] >= 200
    assert r["bias"] <= 0.01


def test_lp_central_range_misses_truth(study_a):
    e = _load("study_e", studies.study_e(study_a.specs[0]))
    est = np.array([r["theta"] for r in e.estimates("LP", 0, 16000)])
    lo, hi = np.quantile(est, [0.025, 0.975])
    assert not lo <= e.truth[0] <= hi
