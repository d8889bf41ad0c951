"""Comparison estimators: regression adjustment (RA, RA^c) and local projections.

Every method returns an :class:`~tsdml.variance.IrfEstimate` so results line
up with DML rows. Variances come from the same fold-wise Bartlett machinery
applied to each method's per-index contributions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from .core import HorizonSample, TsdmlError
from .crossfit import DmlResult, SplitPlan, derive_seed
from .score import stable_mean
from .variance import IrfEstimate, irf_from_scores

__all__ = [
    "regression_adjustment",
    "ra_from_crossfit",
    "local_projection",
    "RankDeficiencyError",
]


class RankDeficiencyError(TsdmlError):
    pass


def _ra_estimate(h, pieces, method, alphas, bandwidth, diagnostics=None):
    contrib = [np.asarray(m1, float) - np.asarray(m0, float) for m1, m0 in pieces]
    theta = stable_mean(np.concatenate(contrib))
    fold_thetas = [stable_mean(c) for c in contrib]
    return irf_from_scores(h, theta, contrib, alphas=alphas, bandwidth=bandwidth,
                           method=method, fold_thetas=fold_thetas,
                           diagnostics=diagnostics)


def regression_adjustment(
    sample: HorizonSample,
    learners,
    plan: SplitPlan | None = None,
    seed: int = 0,
    alphas: Sequence[float] = (0.05, 0.01),
    bandwidth: int | None = None,
) -> IrfEstimate:
    """Mean difference of the two fitted outcome models.

    With a ``plan`` the outcome models are cross-fitted exactly as in
    :func:`~tsdml.crossfit.dml_estimate` (same seeds, so the fits coincide)
    and the method is tagged ``"RAc"``. Without a plan both models are fitted
    on the whole sample and evaluated in-sample (``"RA"``).
    """
    if plan is None:
        mu1, mu0 = learners.outcome_means(sample, sample, seed, 0)
        return _ra_estimate(sample.h, [(mu1, mu0)], "RA", alphas, bandwidth)
    if plan.T != len(sample):
        raise TsdmlError(f"plan covers {plan.T} indices, sample has {len(sample)}")
    pieces = []
    for i in range(plan.K):
        tr = sample.subset(plan.train[i])
        ev = sample.subset(plan.folds[i])
        pieces.append(learners.outcome_means(tr, ev, seed, i))
    return _ra_estimate(sample.h, pieces, "RAc", alphas, bandwidth)


def ra_from_crossfit(
    result: DmlResult, alphas: Sequence[float] = (0.05, 0.01), bandwidth: int | None = None
) -> IrfEstimate:
    """RA^c computed from the outcome predictions already stored in a DML fit."""
    return _ra_estimate(result.h, [(f.mu1, f.mu0) for f in result.folds], "RAc",
                        alphas, bandwidth)


def local_projection(
    sample: HorizonSample,
    controls: np.ndarray | None = None,
    control_names: Sequence[str] | None = None,
    alphas: Sequence[float] = (0.05, 0.01),
    bandwidth: int | None = None,
    rcond: float = 1e-10,
) -> IrfEstimate:
    """OLS of ``Y_{t+h}`` on ``[1, D_t, controls_t]``; the estimate is the
    coefficient on ``D_t``.

    Solved by column-pivoted QR. The per-index influence contributions
    ``e_D' (Z'Z/n)^{-1} z_t u_t`` feed the long-run variance. ``controls``
    defaults to the sample's features.

    Raises
    ------
    RankDeficiencyError
        If the design is rank deficient; the message names the columns that
        are linear combinations of the others.
    """
    x = sample.x if controls is None else np.asarray(controls, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(sample)
    if x.shape[0] != n:
        raise TsdmlError(f"controls have {x.shape[0]} rows, sample has {n}")
    names = ["const", "D"] + list(control_names or [f"x{j + 1}" for j in range(x.shape[1])])
    z = np.column_stack([np.ones(n), sample.d.astype(float), x])
    y = sample.y_fwd
    q, r, piv = qr(z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rcond * diag[0])) if diag.size else 0
    if rank < z.shape[1]:
        bad = sorted(names[j] for j in piv[rank:])
        raise RankDeficiencyError(f"rank-deficient design: collinear columns {bad}")
    coef_p = solve_triangular(r, q.T @ y)
    coef = np.empty_like(coef_p)
    coef[piv] = coef_p
    u = y - z @ coef
    # row of (Z'Z)^{-1} for D: solve R^T R a = e_D in the pivoted basis
    e_d = np.zeros(z.shape[1])
    e_d[np.flatnonzero(piv == 1)[0]] = 1.0
    a_p = solve_triangular(r, solve_triangular(r, e_d, trans="T"))
    a = np.empty_like(a_p)
    a[piv] = a_p
    psi = n * (z @ a) * u
    theta = float(coef[1])
    return irf_from_scores(sample.h, theta, [theta + psi], alphas=alphas,
                           bandwidth=bandwidth, method="LP",
                           diagnostics={"coefficients": dict(zip(names, coef.tolist()))})
