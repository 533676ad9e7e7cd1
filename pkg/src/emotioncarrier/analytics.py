"""Correlation, trend and stability statistics over aligned sessions and cohorts.

Every function is missing-aware: inputs may be masked arrays or sequences
containing ``None``. Pairs with a missing member are dropped for correlation
and regression; rolling windows containing a missing cell are themselves
missing. Sample (n - 1) standard deviations are used throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .timeline import COLUMN_NAMES, AlignedTimeline, DegenerateSession

DEFAULT_WINDOW = 30
STABILITY_EPS = 1e-9


class StatsError(ValueError):
    pass


class DegenerateVariance(StatsError):
    pass


class DegenerateTime(StatsError):
    pass


class TooFewPoints(StatsError):
    pass


class WindowTooLarge(StatsError):
    pass


class TooFewWindows(StatsError):
    pass


class TooFewSessions(StatsError):
    pass


class MissingChannelMetrics(StatsError):
    pass


def as_masked(values) -> np.ma.MaskedArray:
    """Float masked array from a masked array or a sequence that may hold None."""
    if isinstance(values, np.ma.MaskedArray):
        data = np.asarray(values.data, dtype=float)
        mask = np.ma.getmaskarray(values).copy()
    else:
        seq = list(values) if not isinstance(values, np.ndarray) else values
        if isinstance(seq, np.ndarray) and seq.dtype != object:
            data = seq.astype(float)
            mask = np.zeros(data.shape, dtype=bool)
        else:
            mask = np.array([v is None for v in seq], dtype=bool)
            data = np.array([0.0 if v is None else float(v) for v in seq], dtype=float)
    if data.ndim != 1:
        raise ValueError("expected a 1-d series")
    if not np.all(np.isfinite(data[~mask])):
        raise ValueError("series contains non-finite values")
    return np.ma.MaskedArray(np.where(mask, 0.0, data), mask=mask, shrink=False)


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    mx, my = as_masked(x), as_masked(y)
    if mx.shape != my.shape:
        raise ValueError("x and y must have equal length")
    keep = ~(np.ma.getmaskarray(mx) | np.ma.getmaskarray(my))
    return mx.data[keep], my.data[keep]


def pearson(x, y) -> float:
    """Sample Pearson correlation of x and y after dropping incomplete pairs."""
    xs, ys = _paired(x, y)
    if xs.size < 2:
        raise TooFewPoints(f"need at least 2 complete pairs, got {xs.size}")
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise DegenerateVariance("an input has zero variance")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return min(1.0, max(-1.0, r))


def _ols(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    if xs.size < 2:
        raise TooFewPoints(f"need at least 2 complete pairs, got {xs.size}")
    if np.ptp(xs) == 0:
        raise DegenerateTime("all abscissae are equal")
    xm, ym = xs.mean(), ys.mean()
    dx = xs - xm
    slope = float(np.dot(dx, ys - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


def linreg(t, y) -> tuple[float, float]:
    """Least-squares line through (t seconds, y); returns (slope per minute, intercept)."""
    ts, ys = _paired(t, y)
    slope, intercept = _ols(ts, ys)
    return slope * 60.0, intercept


def rolling_std(y, window: int) -> np.ma.MaskedArray:
    """Sample std of every contiguous ``window``-length run; length n - window + 1."""
    if window < 2:
        raise ValueError("window must be >= 2")
    m = as_masked(y)
    if window > m.size:
        raise WindowTooLarge(f"window {window} exceeds series length {m.size}")
    views = sliding_window_view(m.data, window)
    holes = sliding_window_view(np.ma.getmaskarray(m), window).any(axis=1)
    out = views.std(axis=1, ddof=1)
    return np.ma.MaskedArray(np.where(holes, 0.0, out), mask=holes, shrink=False)


def stabilization_index(y, window: int = DEFAULT_WINDOW, eps: float = STABILITY_EPS) -> float:
    """Late-session over early-session rolling dispersion.

    Mean rolling std over the last quarter of windows divided by that over the
    first quarter; values below 1 mean the signal steadied. Returns 1.0 when
    both quarters are flat.
    """
    rs = rolling_std(y, window)
    if rs.size < 4:
        raise TooFewWindows(f"need at least 4 windows, got {rs.size}")
    q = rs.size // 4
    first, last = rs[:q], rs[-q:]
    if first.count() == 0 or last.count() == 0:
        raise TooFewWindows("a quartile has no complete window")
    early, late = float(first.mean()), float(last.mean())
    if early < eps and late < eps:
        return 1.0
    return late / max(early, eps)


@dataclass(frozen=True)
class ChannelMetrics:
    mean: float | None = None
    std: float | None = None
    slope_per_min: float | None = None
    within_session_r: float | None = None
    stabilization_index: float | None = None
    missing_fraction: float = 1.0

    @property
    def present(self) -> bool:
        return self.mean is not None


@dataclass(frozen=True)
class SessionMetrics:
    session_id: str
    duration_s: float
    channels: dict[str, ChannelMetrics] = field(default_factory=dict)

    def scalar(self, selector: str) -> float | None:
        """Look up ``"<channel>.<field>"``, e.g. ``"audio_rms.mean"``."""
        name, _, attr = selector.partition(".")
        if name not in self.channels or attr not in ChannelMetrics.__dataclass_fields__:
            raise KeyError(f"unknown metric selector {selector!r}")
        return getattr(self.channels[name], attr)

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "duration_s": self.duration_s,
            "channels": {name: asdict(self.channels[name]) for name in COLUMN_NAMES if name in self.channels},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SessionMetrics:
        return cls(
            session_id=d["session_id"],
            duration_s=float(d["duration_s"]),
            channels={k: ChannelMetrics(**v) for k, v in d["channels"].items()},
        )


def channel_metrics(t_s: np.ndarray, y, window: int = DEFAULT_WINDOW) -> ChannelMetrics:
    m = as_masked(y)
    n = m.size
    present = m.count()
    missing_fraction = 1.0 - present / n if n else 1.0
    if present < 2:
        return ChannelMetrics(missing_fraction=missing_fraction)
    vals = m.compressed()
    mean = float(vals.mean())
    std = float(vals.std(ddof=1))
    slope, _ = linreg(t_s, m)
    try:
        r = pearson(t_s, m)
    except DegenerateVariance:
        r = None
    try:
        stab = stabilization_index(m, window)
    except (TooFewWindows, WindowTooLarge):
        stab = None
    return ChannelMetrics(mean, std, slope, r, stab, missing_fraction)


def session_metrics(tl: AlignedTimeline, window: int = DEFAULT_WINDOW) -> SessionMetrics:
    """Per-channel summary statistics of one aligned session.

    Channels with fewer than two present cells get empty metrics rather than
    an error; an all-missing pressure channel is a DegenerateSession.
    """
    pressure = tl.channels["pressure_gf"]
    if pressure.count() == 0:
        raise DegenerateSession("pressure channel entirely missing")
    duration_s = (len(tl) - 1) * tl.grid_step_ms / 1000.0
    if duration_s <= 0:
        raise DegenerateSession("session spans a single grid point")
    t = tl.elapsed_s
    chans = {name: channel_metrics(t, tl.channels[name], window) for name in COLUMN_NAMES}
    return SessionMetrics(tl.session_id, duration_s, chans)


@dataclass(frozen=True)
class CohortTrend:
    scalar_name: str
    session_indices: np.ndarray
    scalar_values: np.ndarray
    cross_session_r: float
    cross_session_slope: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "scalar_name": self.scalar_name,
            "session_indices": self.session_indices.tolist(),
            "scalar_values": self.scalar_values.tolist(),
            "cross_session_r": self.cross_session_r,
            "cross_session_slope": self.cross_session_slope,
        }


def cohort_trend(metrics: Sequence[SessionMetrics], selector: str) -> CohortTrend:
    """Correlate a per-session scalar with session order (0..n-1)."""
    idx, vals = [], []
    for k, m in enumerate(metrics):
        v = m.scalar(selector)
        if v is not None:
            idx.append(k)
            vals.append(v)
    if len(idx) < 2:
        raise TooFewSessions(f"{selector}: need at least 2 sessions with a value, got {len(idx)}")
    x = np.asarray(idx, dtype=float)
    y = np.asarray(vals, dtype=float)
    r = pearson(x, y)
    slope, _ = _ols(x, y)
    return CohortTrend(selector, np.asarray(idx, dtype=np.int64), y, r, slope)


@dataclass(frozen=True)
class ClassifyThresholds:
    hr_slope_min: float = 0.2
    rr_slope_min: float = 0.05
    stab_max: float = 0.9


@dataclass(frozen=True)
class CalmingVerdict:
    verdict: str
    hr_falling: bool = False
    rr_falling: bool = False
    audio_settling: bool = False
    hr_rising: bool = False
    rr_rising: bool = False
    audio_unsettled: bool = False
    missing: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["missing"] = list(self.missing)
        return d


def classify(metrics: SessionMetrics, thresholds: ClassifyThresholds | None = None,
             strict: bool = False) -> CalmingVerdict:
    """Calming, neutral or agitated from heart-rate, respiratory and noise trends.

    Calming needs HR and RR falling faster than their thresholds and the noise
    stabilization index below ``stab_max``. Agitated mirrors each rule: HR and
    RR rising faster than the thresholds and the index above ``1 / stab_max``.
    Missing inputs give a neutral verdict listing them, or raise
    MissingChannelMetrics when ``strict``.
    """
    th = thresholds or ClassifyThresholds()
    hr = metrics.scalar("heart_rate.slope_per_min")
    rr = metrics.scalar("respiratory_rate.slope_per_min")
    stab = metrics.scalar("audio_rms.stabilization_index")
    missing = tuple(name for name, v in (("heart_rate", hr), ("respiratory_rate", rr), ("audio_rms", stab))
                    if v is None)
    if missing:
        if strict:
            raise MissingChannelMetrics(f"missing metrics for {', '.join(missing)}")
        return CalmingVerdict("neutral", missing=missing)
    flags = dict(
        hr_falling=hr < -th.hr_slope_min,
        rr_falling=rr < -th.rr_slope_min,
        audio_settling=stab < th.stab_max,
        hr_rising=hr > th.hr_slope_min,
        rr_rising=rr > th.rr_slope_min,
        audio_unsettled=stab > 1.0 / th.stab_max,
    )
    if flags["hr_falling"] and flags["rr_falling"] and flags["audio_settling"]:
        verdict = "calming"
    elif flags["hr_rising"] and flags["rr_rising"] and flags["audio_unsettled"]:
        verdict = "agitated"
    else:
        verdict = "neutral"
    return CalmingVerdict(verdict, **flags)


TREND_SERIES = (
    ("mean_pressure_gf", "pressure_gf.mean"),
    ("mean_audio_rms", "audio_rms.mean"),
    ("mean_heart_rate", "heart_rate.mean"),
    ("mean_respiratory_rate", "respiratory_rate.mean"),
    ("stab_pressure_gf", "pressure_gf.stabilization_index"),
    ("stab_audio_rms", "audio_rms.stabilization_index"),
    ("stab_heart_rate", "heart_rate.stabilization_index"),
    ("stab_respiratory_rate", "respiratory_rate.stabilization_index"),
)
TREND_COLUMNS = ("session_index",) + tuple(c for c, _ in TREND_SERIES)


def trend_rows(metrics: Sequence[SessionMetrics]) -> list[dict[str, Any]]:
    """One row per session in start order; absent values are None."""
    rows = []
    for k, m in enumerate(metrics):
        row: dict[str, Any] = {"session_index": k}
        for col, sel in TREND_SERIES:
            row[col] = m.scalar(sel)
        rows.append(row)
    return rows
