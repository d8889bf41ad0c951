"""Desk-scale simulation studies behind the Monte Carlo acceptance checks.

Running this module regenerates the cached results in ``tests/data``.
"""

from __future__ import annotations

import sys
import time
from dataclasses import replace
from pathlib import Path

from tsdml.mc import StudyConfig, StudyResult, run_study

DATA = Path(__file__).parent / "data"

STUDY_A = StudyConfig(
    scenario="one-sample",
    horizons=(0, 1, 3, 5),
    T_list=(4000,),
    N=200,
    R=10,
    k_T=20,
    K=2,
    gap_side="both",
    n_trees=100,
    seed_base=0,
)


def study_b(specs_h0) -> StudyConfig:
    return replace(
        STUDY_A, horizons=(0,), T_list=(1000, 16000), methods=("DML",), seed_base=0,
        specs={0: specs_h0},
    )


def study_c(specs_h1) -> StudyConfig:
    """RA against DML at the long tier, h=1."""
    return replace(STUDY_A, horizons=(1,), T_list=(16000,), methods=("DML", "RA"),
                   specs={1: specs_h1})


def study_d(specs_h0) -> StudyConfig:
    """Two-sample pipeline, h=0, long tier."""
    return replace(STUDY_A, scenario="two-sample", horizons=(0,), T_list=(16000,),
                   methods=("DML",), specs={0: specs_h0})


def study_e(specs_h0) -> StudyConfig:
    """Local projections at h=0 on the long tier."""
    return replace(STUDY_A, horizons=(0,), T_list=(16000,), methods=("LP",),
                   specs={0: specs_h0})


def all_configs(a: StudyResult) -> dict:
    return {
        "study_b": study_b(a.specs[0]),
        "study_c": study_c(a.specs[1]),
        "study_d": study_d(a.specs[0]),
        "study_e": study_e(a.specs[0]),
    }


def load(name: str, cfg: StudyConfig) -> StudyResult | None:
    path = DATA / f"{name}.json"
    if not path.exists():
        return None
    return StudyResult.from_json(path.read_text(), cfg)


def _run(name, cfg, threads):
    start = time.time()
    res = run_study(replace(cfg, threads=threads),
                    progress=lambda T, i: None)
    res.config = cfg
    (DATA / f"{name}.json").write_text(res.to_json())
    print(f"{name}: {time.time() - start:.0f}s, {len(res.failures)} failures", flush=True)
    return res


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    threads = int(argv[0]) if argv else 1
    DATA.mkdir(exist_ok=True)
    a = load("study_a", STUDY_A) or _run("study_a", STUDY_A, threads)
    for name, cfg in all_configs(a).items():
        if load(name, cfg) is None:
            _run(name, cfg, threads)


if __name__ == "__main__":
    main()
