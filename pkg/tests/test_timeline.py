import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emotioncarrier.session import ChannelSeries, Session
from emotioncarrier.telemetry import CalibrationProfile, Channel
from emotioncarrier.timeline import DegenerateSession, align, hold_last, interpolate_linear

UNIT = CalibrationProfile("d", 0.0, 1.0)  # counts == gram-force


def series(ch, pairs):
    ts, vs = zip(*pairs) if pairs else ((), ())
    return ChannelSeries(ch, np.array(ts, dtype=np.int64), np.array(vs, dtype=float))


def session(pressure, start=None, end=None, **others):
    chans = {Channel.PRESSURE_RAW: series(Channel.PRESSURE_RAW, pressure)}
    for name, pairs in others.items():
        chans[Channel(name)] = series(Channel(name), pairs)
    return Session("S", "p", "d", start if start is not None else pressure[0][0],
                   end if end is not None else pressure[-1][0], chans, UNIT)


def values(m):
    return [None if mk else float(v) for v, mk in zip(m.data, np.ma.getmaskarray(m))]


def test_interpolate_linear_examples():
    s = series(Channel.AUDIO_RMS, [(0, 0.0), (10, 1.0)])
    assert interpolate_linear(s, 5) == 0.5
    assert interpolate_linear(s, 10) == 1.0
    assert interpolate_linear(s, 0) == 0.0
    assert interpolate_linear(s, 11) is None
    assert interpolate_linear(s, -1) is None


def test_pressure_linear_midpoint():
    tl = align(session([(0, 0.0), (10_000, 10.0)]), grid_step_ms=5000)
    assert values(tl.channels["pressure_gf"]) == [0.0, 5.0, 10.0]


def test_calibration_applied():
    s = session([(0, 8400.0), (1000, 12600.0)])
    tl = align(s, 1000, CalibrationProfile("d", 8400.0, 420.0))
    assert values(tl.channels["pressure_gf"]) == [0.0, 10.0]


def test_heart_rate_hold_last():
    tl = align(session([(0, 1.0), (5000, 1.0)], heart_rate=[(0, 80.0), (5000, 76.0)]), 1000)
    assert values(tl.channels["heart_rate"]) == [80, 80, 80, 80, 80, 76]


def test_single_sample_held_for_max_gap_then_missing():
    tl = align(session([(0, 1.0), (60_000, 1.0)], heart_rate=[(0, 72.0)]), 1000,
               max_gap_ms={"heart_rate": 10_000})
    v = values(tl.channels["heart_rate"])
    assert len(v) == 61
    assert v[:11] == [72.0] * 11
    assert v[11:] == [None] * 50


def test_hold_last_missing_before_first_sample():
    s = series(Channel.HEART_RATE, [(3000, 70.0)])
    assert values(hold_last(s, [0, 2999, 3000, 4000])) == [None, None, 70.0, 70.0]


def test_dense_gap_beyond_max_gap_is_missing():
    pressure = [(t, 1.0) for t in range(0, 10_001, 100)] + [(t, 1.0) for t in range(30_000, 40_001, 100)]
    tl = align(session(pressure), 1000)
    p = values(tl.channels["pressure_gf"])
    assert p[10] == 1.0 and p[30] == 1.0
    assert all(v is None for v in p[16:25])  # > 5 s from at least one neighbour
    assert p[11] is None  # 19 s to the right-hand sample


def test_empty_channel_is_all_missing():
    tl = align(session([(0, 1.0), (3000, 1.0)]), 1000)
    assert values(tl.channels["respiratory_rate"]) == [None] * 4


def test_degenerate_session():
    s = session([(0, 1.0)])
    object.__setattr__(s, "channels", {**s.channels, Channel.PRESSURE_RAW: ChannelSeries.empty(Channel.PRESSURE_RAW)})
    with pytest.raises(DegenerateSession):
        align(s)


def test_no_nan_and_csv_marks_missing():
    tl = align(session([(0, 1.0), (2000, 3.0)], heart_rate=[(1000, 70.0)]), 1000)
    for m in tl.channels.values():
        assert not np.isnan(m.data).any()
    lines = tl.to_csv().splitlines()
    assert lines[0] == "t_ms,pressure_gf,audio_rms,heart_rate,respiratory_rate"
    assert lines[1] == "0,1.0,,,"
    assert lines[2] == "1000,2.0,,70.0,"


@settings(max_examples=60, deadline=None)
@given(
    slope=st.floats(-5, 5), intercept=st.floats(-100, 100),
    period=st.sampled_from([100, 250, 1000]), n=st.integers(2, 200), step=st.sampled_from([500, 1000, 3000]),
)
def test_linear_signal_reproduced(slope, intercept, period, n, step):
    pairs = [(k * period, intercept + slope * k * period / 1000) for k in range(n)]
    tl = align(session(pairs), step, max_gap_ms={"pressure_gf": 10_000})
    t = tl.times_ms
    got = tl.channels["pressure_gf"]
    assert len(t) == (pairs[-1][0] - pairs[0][0]) // step + 1
    assert got.count() == len(t)
    np.testing.assert_allclose(got.data, intercept + slope * t / 1000, atol=1e-9, rtol=0)


@settings(max_examples=60, deadline=None)
@given(c=st.floats(-1e3, 1e3), ts=st.lists(st.integers(0, 120_000), min_size=2, max_size=60, unique=True),
       step=st.integers(100, 5000))
def test_constant_in_constant_out(c, ts, step):
    pairs = [(t, c) for t in sorted(ts)]
    tl = align(session(pairs, heart_rate=[(t, 70.0) for t in sorted(ts)]), step)
    for name in ("pressure_gf", "heart_rate"):
        m = tl.channels[name]
        present = m.compressed()
        assert np.all(present == (c if name == "pressure_gf" else 70.0))


@settings(max_examples=40, deadline=None)
@given(vals=st.lists(st.floats(0, 1), min_size=2, max_size=100), step=st.sampled_from([500, 1000]))
def test_realigning_grid_sampled_session_is_identity(vals, step):
    pairs = [(k * step, v) for k, v in enumerate(vals)]
    s = session([(k * step, 1.0) for k in range(len(vals))], audio_rms=pairs)
    tl = align(s, step)
    np.testing.assert_array_equal(tl.channels["audio_rms"].data, np.array(vals))
    again = session([(k * step, 1.0) for k in range(len(vals))],
                    audio_rms=list(zip(tl.times_ms.tolist(), tl.channels["audio_rms"].data.tolist())))
    np.testing.assert_array_equal(align(again, step).channels["audio_rms"].data, tl.channels["audio_rms"].data)
