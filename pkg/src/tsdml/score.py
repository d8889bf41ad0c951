"""Doubly robust influence function and the oracle IRF estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HorizonSample, OverlapError, TsdmlError

__all__ = [
    "DEFAULT_ETA",
    "NuisanceValues",
    "clip_propensity",
    "stable_mean",
    "dr_score",
    "dr_scores",
    "dr_score_multilevel",
    "dr_scores_multilevel",
    "oracle_estimate",
]

DEFAULT_ETA = 0.01


@dataclass(frozen=True, eq=False)
class NuisanceValues:
    """Nuisance predictions aligned with the entries of a HorizonSample."""

    mu1: np.ndarray
    mu0: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        for name in ("mu1", "mu0", "e"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.mu1) == len(self.mu0) == len(self.e)):
            raise TsdmlError("nuisance arrays must have equal length")

    def __len__(self) -> int:
        return len(self.e)


def clip_propensity(e, eta: float = DEFAULT_ETA) -> tuple[np.ndarray, int]:
    """Clip propensities to ``[eta, 1 - eta]``.

    Returns the clipped array and the number of entries that were moved.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError(f"eta must lie in (0, 0.5), got {eta}")
    e = np.asarray(e, dtype=float)
    clipped = np.clip(e, eta, 1.0 - eta)
    return clipped, int(np.count_nonzero(clipped != e))


def stable_mean(values) -> float:
    """Mean with exactly rounded summation (``math.fsum``)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise TsdmlError("mean of an empty series")
    return math.fsum(v.tolist()) / v.size


def dr_score(y_fwd: float, d: int, mu1: float, mu0: float, e: float) -> float:
    """Doubly robust score for one observation with a binary treatment."""
    if not 0.0 < e < 1.0:
        raise OverlapError(f"overlap violation: propensity {e} outside (0, 1)")
    d = float(d)
    return (mu1 - mu0) + d / e * (y_fwd - mu1) - (1.0 - d) / (1.0 - e) * (y_fwd - mu0)


def dr_scores(y_fwd, d, mu1, mu0, e) -> np.ndarray:
    """Vectorised :func:`dr_score`."""
    y_fwd, mu1, mu0, e = (np.asarray(a, dtype=float) for a in (y_fwd, mu1, mu0, e))
    if np.any(~(e > 0.0) | ~(e < 1.0)):
        raise OverlapError("overlap violation: propensity outside (0, 1)")
    d = np.asarray(d, dtype=float)
    return (mu1 - mu0) + d / e * (y_fwd - mu1) - (1.0 - d) / (1.0 - e) * (y_fwd - mu0)


def dr_score_multilevel(
    y_fwd: float,
    d: int,
    target: int,
    baseline: int,
    mu_target: float,
    mu_base: float,
    e_target: float,
    e_base: float,
) -> float:
    """Pairwise doubly robust score for the contrast ``target`` vs ``baseline``.

    Observations whose treatment is neither level contribute only the
    outcome-model difference.
    """
    if not (e_target > 0.0 and e_base > 0.0):
        raise OverlapError(
            f"overlap violation: propensities ({e_target}, {e_base}) must be positive"
        )
    ind_t = 1.0 if d == target else 0.0
    ind_b = 1.0 if d == baseline else 0.0
    return (
        (mu_target - mu_base)
        + ind_t / e_target * (y_fwd - mu_target)
        - ind_b / e_base * (y_fwd - mu_base)
    )


def dr_scores_multilevel(y_fwd, d, target, baseline, mu_target, mu_base, e_target, e_base):
    """Vectorised :func:`dr_score_multilevel`."""
    y_fwd, mu_target, mu_base, e_target, e_base = (
        np.asarray(a, dtype=float) for a in (y_fwd, mu_target, mu_base, e_target, e_base)
    )
    if np.any(~(e_target > 0.0)) or np.any(~(e_base > 0.0)):
        raise OverlapError("overlap violation: nonpositive propensity")
    d = np.asarray(d)
    ind_t = (d == target).astype(float)
    ind_b = (d == baseline).astype(float)
    return (
        (mu_target - mu_base)
        + ind_t / e_target * (y_fwd - mu_target)
        - ind_b / e_base * (y_fwd - mu_base)
    )


def oracle_estimate(sample: HorizonSample, nv: NuisanceValues) -> float:
    """Average score over all entries, with the nuisances taken as given."""
    if len(nv) != len(sample):
        raise TsdmlError(
            f"nuisance values cover {len(nv)} entries, sample has {len(sample)}"
        )
    g = dr_scores(sample.y_fwd, sample.d, nv.mu1, nv.mu0, nv.e)
    return stable_mean(g)
