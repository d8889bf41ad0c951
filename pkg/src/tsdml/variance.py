"""Long-run variance of the score process and normal confidence bounds.

Each cross-fitting fold gets its own Bartlett-weighted autocovariance sum,
computed on the residuals ``g_t - theta_hat``. The fold variances are then
averaged with weights proportional to the number of evaluated indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .core import TsdmlError

__all__ = [
    "ResidualSeries",
    "IrfEstimate",
    "bartlett_weight",
    "newey_west_fold",
    "combine_variance",
    "pilot_lag",
    "auto_bandwidth",
    "normal_quantile",
    "confidence_interval",
    "irf_from_scores",
]

_NORMAL = NormalDist()


@dataclass(frozen=True, eq=False)
class ResidualSeries:
    """Residuals of one fold, ordered by time index."""

    values: np.ndarray
    fold: int = 0
    start: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise TsdmlError(f"non-finite residual in fold {self.fold}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class IrfEstimate:
    """Point estimate, long-run variance and confidence bounds at one horizon.

    ``ci`` maps a level ``alpha`` (e.g. 0.05) to ``(lo, hi)``.
    """

    h: int
    theta: float
    variance: float
    effective_count: int
    ci: dict[float, tuple[float, float]]
    bandwidths: list[int]
    method: str = "DML"
    fold_thetas: list[float] = field(default_factory=list)
    fold_counts: list[int] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.effective_count)


def bartlett_weight(s: int, m: int) -> float:
    """Bartlett kernel ``1 - s/(m+1)`` for lags ``1 <= s <= m``."""
    if not 1 <= s <= m:
        raise ValueError(f"lag s={s} outside 1..m={m}")
    return 1.0 - s / (m + 1.0)


def newey_west_fold(res, m: int) -> float:
    """Bartlett-weighted long-run variance of one fold's residuals.

    Parameters
    ----------
    res : ResidualSeries or array_like
        Residuals ``v_t`` of a contiguous fold.
    m : int
        Bandwidth, ``0 <= m < len(res)``.

    Returns
    -------
    float
        ``(sum v_t^2 + 2 sum_{s=1}^m w(s, m) sum_t v_t v_{t-s}) / n``.
    """
    v = res.values if isinstance(res, ResidualSeries) else np.asarray(res, dtype=float)
    n = len(v)
    m = int(m)
    if m < 0 or m >= n:
        raise TsdmlError(f"bandwidth m={m} must satisfy 0 <= m < fold length {n}")
    total = float(np.dot(v, v))
    for s in range(1, m + 1):
        total += 2.0 * bartlett_weight(s, m) * float(np.dot(v[s:], v[:-s]))
    return total / n


def combine_variance(fold_variances: Sequence[float], fold_weights: Sequence[float]) -> float:
    """Weighted mean of per-fold variances (weights must sum to one)."""
    v = np.asarray(fold_variances, dtype=float)
    w = np.asarray(fold_weights, dtype=float)
    if v.shape != w.shape or v.size == 0:
        raise TsdmlError("fold variances and weights must be nonempty and aligned")
    if abs(w.sum() - 1.0) > 1e-9:
        raise TsdmlError(f"fold weights sum to {w.sum()}, expected 1")
    return math.fsum((v * w).tolist())


def pilot_lag(n: int) -> int:
    """Pilot truncation ``floor(4 (n/100)^(2/9))``."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def auto_bandwidth(res) -> int:
    """Data-driven Bartlett bandwidth (Newey and West, 1994).

    Uses the pilot lag ``l = floor(4 (n/100)^(2/9))``, the sums
    ``s0 = sum_{|j|<=l} gamma_j`` and ``s1 = sum_{|j|<=l} |j| gamma_j`` of
    sample autocovariances, and returns
    ``floor(1.1447 ((s1/s0)^2)^(1/3) n^(1/3))`` clamped to ``[0, n-1]``.
    Falls back to the pilot lag when ``s0 <= 0``.
    """
    v = res.values if isinstance(res, ResidualSeries) else np.asarray(res, dtype=float)
    n = len(v)
    if n < 16:
        raise TsdmlError(f"series too short for bandwidth selection: {n} < 16")
    lag = min(pilot_lag(n), n - 1)
    gam = np.array([np.dot(v[j:], v[: n - j]) / n for j in range(lag + 1)])
    s0 = gam[0] + 2.0 * gam[1:].sum()
    s1 = 2.0 * np.dot(np.arange(1, lag + 1), gam[1:])
    if not s0 > 0.0:
        return lag
    m = math.floor(1.1447 * ((s1 / s0) ** 2) ** (1.0 / 3.0) * n ** (1.0 / 3.0))
    return int(max(0, min(m, n - 1)))


def normal_quantile(p: float) -> float:
    """Standard normal quantile function (Wichura's AS241 via ``statistics``)."""
    return _NORMAL.inv_cdf(p)


def confidence_interval(theta: float, variance: float, effective_count: int, alpha: float):
    """Symmetric normal bounds ``theta +/- z_{1-alpha/2} sqrt(variance / count)``."""
    if variance < 0:
        raise TsdmlError(f"negative variance {variance}")
    if effective_count < 1:
        raise TsdmlError("effective count must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(variance / effective_count)
    return theta - half, theta + half


def irf_from_scores(
    h: int,
    theta: float,
    fold_scores: Sequence[np.ndarray],
    alphas: Sequence[float] = (0.05, 0.01),
    bandwidth: int | None = None,
    method: str = "DML",
    fold_thetas: Sequence[float] = (),
    diagnostics: dict | None = None,
) -> IrfEstimate:
    """Assemble an :class:`IrfEstimate` from per-fold score series.

    The residuals are ``scores - theta`` within each fold. With
    ``bandwidth=None`` each fold selects its own bandwidth; folds shorter
    than 16 use the pilot lag instead (recorded in ``diagnostics``).
    """
    diagnostics = dict(diagnostics or {})
    counts = [len(s) for s in fold_scores]
    total = sum(counts)
    if total == 0:
        raise TsdmlError("no evaluated indices")
    fold_vars, bws = [], []
    for i, s in enumerate(fold_scores):
        res = ResidualSeries(np.asarray(s, dtype=float) - theta, fold=i)
        if bandwidth is not None:
            m = min(int(bandwidth), len(res) - 1)
        elif len(res) >= 16:
            m = auto_bandwidth(res)
        else:
            m = min(pilot_lag(len(res)), len(res) - 1)
            diagnostics.setdefault("short_fold_bandwidth", []).append(i)
        bws.append(m)
        fold_vars.append(newey_west_fold(res, m))
    weights = [c / total for c in counts]
    var = combine_variance(fold_vars, weights)
    if var < 0.0:
        # Bartlett sums are nonnegative up to rounding
        var = 0.0
    ci = {a: confidence_interval(theta, var, total, a) for a in alphas}
    return IrfEstimate(
        h=h,
        theta=float(theta),
        variance=float(var),
        effective_count=total,
        ci=ci,
        bandwidths=bws,
        method=method,
        fold_thetas=[float(t) for t in fold_thetas],
        fold_counts=counts,
        diagnostics=diagnostics,
    )
