"""Time-indexed data model and horizon-shifted estimation samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "TsdmlError",
    "HorizonError",
    "OverlapError",
    "ArmStarvationError",
    "DegenerateSplitError",
    "Panel",
    "HorizonSample",
    "validate_panel",
    "build_horizon_sample",
]


class TsdmlError(ValueError):
    """Base class for estimation errors raised by this package."""


class HorizonError(TsdmlError):
    pass


class OverlapError(TsdmlError):
    pass


class ArmStarvationError(TsdmlError):
    pass


class DegenerateSplitError(TsdmlError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Panel:
    """Observed series indexed by t = 0..T-1.

    Parameters
    ----------
    y : array_like, shape (T,)
        Outcome.
    d : array_like, shape (T,)
        Integer treatment codes.
    x : array_like, shape (T, n)
        Confounders, including any lag columns appended at ingestion.
    codes : sequence of int
        Declared treatment code set. Binary panels use ``(0, 1)``.
    feature_names : sequence of str, optional
    timestamps : sequence, optional
        Original time labels, kept as metadata only.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    codes: tuple[int, ...] = (0, 1)
    feature_names: tuple[str, ...] = ()
    timestamps: tuple = ()
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        y = _frozen(self.y, float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _frozen(x, float)
        d_raw = np.asarray(self.d)
        if d_raw.size and not np.all(np.isfinite(d_raw.astype(float))):
            raise TsdmlError("treatment codes must be finite integers")
        d = _frozen(d_raw, np.int64)
        if not (len(y) == len(d) == x.shape[0]):
            raise TsdmlError(
                f"length mismatch: y={len(y)}, d={len(d)}, x={x.shape[0]}"
            )
        names = tuple(self.feature_names) or tuple(
            f"x{i + 1}" for i in range(x.shape[1])
        )
        if len(names) != x.shape[1]:
            raise TsdmlError("feature_names does not match the number of columns of x")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "codes", tuple(int(c) for c in self.codes))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "times", _frozen(np.arange(len(y)), np.int64))

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def n(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class HorizonSample:
    """Entries (t, Y_{t+h}, D_t, X_t) for t = 0..T-1-h."""

    h: int
    t: np.ndarray
    y_fwd: np.ndarray
    d: np.ndarray
    x: np.ndarray
    codes: tuple[int, ...] = (0, 1)

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, idx: np.ndarray) -> "HorizonSample":
        """Rows at positions ``idx`` (positions, not time labels)."""
        idx = np.asarray(idx, dtype=np.int64)
        return HorizonSample(
            self.h,
            _frozen(self.t[idx], np.int64),
            _frozen(self.y_fwd[idx], float),
            _frozen(self.d[idx], np.int64),
            _frozen(self.x[idx], float),
            self.codes,
        )


def validate_panel(panel: Panel) -> list[str]:
    """Check the Panel invariants and return one message per violation.

    An empty list means the panel is well formed. Nothing is raised; the
    caller decides whether a diagnostic is fatal.
    """
    out: list[str] = []
    T = panel.T
    if T < 2:
        out.append(f"sample too short: T={T} < 2")
    if panel.n < 1:
        out.append("no confounder columns (n=0)")
    for t in np.flatnonzero(~np.isfinite(panel.y)):
        out.append(f"non-finite outcome at t={t}")
    bad_rows, bad_cols = np.nonzero(~np.isfinite(panel.x))
    for t, j in zip(bad_rows, bad_cols):
        out.append(f"non-finite feature '{panel.feature_names[j]}' at t={t}")
    allowed = set(panel.codes)
    for t in np.flatnonzero(~np.isin(panel.d, list(allowed))):
        out.append(
            f"unknown treatment code {int(panel.d[t])} at t={t} "
            f"(declared {sorted(allowed)})"
        )
    ts = panel.timestamps
    if ts:
        out.extend(_timestamp_gaps(ts))
    return out


def _timestamp_gaps(ts: Sequence) -> list[str]:
    """Index-gap diagnostics for numeric or sortable timestamp metadata."""
    try:
        vals = np.array([float(v) for v in ts])
    except (TypeError, ValueError):
        vals = None
    out = []
    if vals is not None:
        steps = np.diff(vals)
        if np.any(steps <= 0):
            t = int(np.argmax(steps <= 0)) + 1
            out.append(f"time index not strictly increasing at t={t}")
        elif len(steps) and not np.allclose(steps, steps[0]):
            t = int(np.argmax(~np.isclose(steps, steps[0]))) + 1
            out.append(f"index gap before t={t}")
    else:
        labels = [str(v) for v in ts]
        for t in range(1, len(labels)):
            if labels[t] <= labels[t - 1]:
                out.append(f"time index not strictly increasing at t={t}")
                break
    return out


def build_horizon_sample(panel: Panel, h: int) -> HorizonSample:
    """Shift the outcome forward by ``h`` periods.

    Raises
    ------
    HorizonError
        If ``h`` is negative or leaves no entries (``h >= T``).
    """
    h = int(h)
    if h < 0:
        raise HorizonError(f"horizon must be nonnegative, got {h}")
    T = panel.T
    if h >= T:
        raise HorizonError(f"horizon exceeds sample: h={h} >= T={T}")
    m = T - h
    return HorizonSample(
        h,
        _frozen(np.arange(m), np.int64),
        _frozen(panel.y[h:], float),
        _frozen(panel.d[:m], np.int64),
        _frozen(panel.x[:m], float),
        panel.codes,
    )
