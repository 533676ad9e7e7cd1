"""Resampling a session's multi-rate channels onto one uniform grid."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .session import ChannelSeries, Session
from .telemetry import DEFAULT_CALIBRATION, CalibrationProfile, Channel, calibrate_pressure

DEFAULT_GRID_STEP_MS = 1000
DENSE_MAX_GAP_MS = 5_000
SPARSE_MAX_GAP_MS = 30_000

# output column name, source channel, interpolation rule
COLUMNS: tuple[tuple[str, Channel, str], ...] = (
    ("pressure_gf", Channel.PRESSURE_RAW, "linear"),
    ("audio_rms", Channel.AUDIO_RMS, "linear"),
    ("heart_rate", Channel.HEART_RATE, "hold"),
    ("respiratory_rate", Channel.RESPIRATORY_RATE, "hold"),
)
COLUMN_NAMES = tuple(c[0] for c in COLUMNS)

DEFAULT_MAX_GAP_MS = {
    "pressure_gf": DENSE_MAX_GAP_MS,
    "audio_rms": DENSE_MAX_GAP_MS,
    "heart_rate": SPARSE_MAX_GAP_MS,
    "respiratory_rate": SPARSE_MAX_GAP_MS,
}


class DegenerateSession(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AlignedTimeline:
    """Every channel on a shared grid.

    Each channel is a ``numpy.ma.MaskedArray``; masked cells are missing and
    their underlying data is 0.0, never NaN. Pressure is in gram-force.
    """

    session_id: str
    grid_start_ms: int
    grid_step_ms: int
    channels: dict[str, np.ma.MaskedArray]

    def __len__(self) -> int:
        return len(next(iter(self.channels.values())))

    @property
    def times_ms(self) -> np.ndarray:
        return self.grid_start_ms + np.arange(len(self), dtype=np.int64) * self.grid_step_ms

    @property
    def elapsed_s(self) -> np.ndarray:
        return np.arange(len(self), dtype=float) * (self.grid_step_ms / 1000.0)

    def to_csv(self) -> str:
        """CSV with columns t_ms and one per channel; missing cells are empty fields."""
        buf = io.StringIO()
        buf.write(",".join(("t_ms",) + COLUMN_NAMES) + "\n")
        cols = [(self.channels[name].data.tolist(), np.ma.getmaskarray(self.channels[name]).tolist())
                for name in COLUMN_NAMES]
        for i, t in enumerate(self.times_ms.tolist()):
            cells = [str(t)]
            for data, mask in cols:
                cells.append("" if mask[i] else repr(data[i]))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


def _masked(values: np.ndarray, missing: np.ndarray) -> np.ma.MaskedArray:
    data = np.where(missing, 0.0, values)
    return np.ma.MaskedArray(data, mask=missing.copy(), shrink=False)


def _linear(ts: np.ndarray, vs: np.ndarray, t: np.ndarray, max_gap_ms: float | None) -> np.ma.MaskedArray:
    if ts.size == 0:
        return _masked(np.zeros(t.shape), np.ones(t.shape, dtype=bool))
    right = np.searchsorted(ts, t, side="left")
    idx = np.minimum(right, ts.size - 1)
    exact = ts[idx] == t
    missing = (t < ts[0]) | (t > ts[-1])
    values = np.zeros(t.shape)
    if ts.size > 1:
        r = np.clip(right, 1, ts.size - 1)
        t0, t1 = ts[r - 1], ts[r]
        v0, v1 = vs[r - 1], vs[r]
        values = v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
        if max_gap_ms is not None:
            missing |= np.maximum(t - t0, t1 - t) > max_gap_ms
    values = np.where(exact, vs[idx], values)
    return _masked(values, missing & ~exact)


def _hold(ts: np.ndarray, vs: np.ndarray, t: np.ndarray, max_gap_ms: float | None) -> np.ma.MaskedArray:
    if ts.size == 0:
        return _masked(np.zeros(t.shape), np.ones(t.shape, dtype=bool))
    idx = np.searchsorted(ts, t, side="right") - 1
    missing = idx < 0
    safe = np.maximum(idx, 0)
    if max_gap_ms is not None:
        missing |= (t - ts[safe]) > max_gap_ms
    return _masked(vs[safe], missing)


def interpolate_linear(series: ChannelSeries, t_ms, max_gap_ms: float | None = None):
    """Linear interpolation at ``t_ms`` (scalar or array).

    Exact at sample timestamps, missing outside the sampled span. With
    ``max_gap_ms`` set, a point is also missing when either bracketing sample
    lies farther than ``max_gap_ms`` away. Scalars return a float or None;
    arrays return a masked array.
    """
    t = np.atleast_1d(np.asarray(t_ms, dtype=np.int64))
    out = _linear(series.timestamps_ms, series.values, t, max_gap_ms)
    if np.ndim(t_ms) == 0:
        return None if out.mask[0] else float(out.data[0])
    return out


def hold_last(series: ChannelSeries, t_ms, max_gap_ms: float | None = None) -> np.ma.MaskedArray:
    """Most recent sample at or before each time.

    Missing before the first sample, or where the held sample is older than ``max_gap_ms``.
    """
    t = np.atleast_1d(np.asarray(t_ms, dtype=np.int64))
    return _hold(series.timestamps_ms, series.values, t, max_gap_ms)


def align(session: Session, grid_step_ms: int = DEFAULT_GRID_STEP_MS,
          calibration: CalibrationProfile | None = None,
          max_gap_ms: dict[str, float] | None = None) -> AlignedTimeline:
    """Resample every channel of ``session`` onto a grid starting at its start time.

    Pressure is calibrated to gram-force first (``calibration`` falls back to the
    session's own profile, then the default). Dense channels are linearly
    interpolated; heart and respiratory rate hold their last reported value.
    """
    if grid_step_ms <= 0:
        raise ValueError("grid_step_ms must be > 0")
    if len(session.channels[Channel.PRESSURE_RAW]) == 0:
        raise DegenerateSession("session has no pressure samples")
    cal = calibration or session.calibration or DEFAULT_CALIBRATION
    gaps = dict(DEFAULT_MAX_GAP_MS)
    if max_gap_ms:
        gaps.update(max_gap_ms)
    n = (session.end_ts_ms - session.start_ts_ms) // grid_step_ms + 1
    grid = session.start_ts_ms + np.arange(n, dtype=np.int64) * grid_step_ms

    channels: dict[str, np.ma.MaskedArray] = {}
    for name, ch, rule in COLUMNS:
        series = session.channels[ch]
        values = series.values
        if ch is Channel.PRESSURE_RAW:
            values = calibrate_pressure(values, cal)
        resample = _linear if rule == "linear" else _hold
        channels[name] = resample(series.timestamps_ms, values, grid, gaps[name])
    return AlignedTimeline(session.session_id, session.start_ts_ms, grid_step_ms, channels)
