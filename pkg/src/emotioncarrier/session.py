"""Session and per-channel series value types."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .telemetry import CalibrationProfile, Channel, SensorFrame, in_channel_range

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def make_session_id(start_ts_ms: int, device_id: str, participant_id: str) -> str:
    """26-char ULID-style id: 48-bit ms timestamp + 80 bits from a digest of the identity.

    Deterministic, so the same recording always maps to the same id.
    """
    digest = hashlib.blake2b(f"{device_id}\0{participant_id}\0{start_ts_ms}".encode(), digest_size=10).digest()
    n = ((start_ts_ms & (2**48 - 1)) << 80) | int.from_bytes(digest, "big")
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[n & 31])
        n >>= 5
    return "".join(reversed(chars))


@dataclass(frozen=True, eq=False)
class ChannelSeries:
    channel: Channel
    timestamps_ms: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps_ms, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "timestamps_ms", ts)
        object.__setattr__(self, "values", vals)
        if ts.ndim != 1 or ts.shape != vals.shape:
            raise ValueError("timestamps and values must be 1-d arrays of equal length")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError(f"{self.channel.value}: timestamps not strictly increasing")
        if not all(in_channel_range(self.channel, v) for v in vals.tolist()):
            raise ValueError(f"{self.channel.value}: value out of channel range")

    @classmethod
    def empty(cls, channel: Channel) -> ChannelSeries:
        return cls(channel, np.empty(0, dtype=np.int64), np.empty(0))

    def __len__(self) -> int:
        return int(self.timestamps_ms.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelSeries):
            return NotImplemented
        return (
            self.channel == other.channel
            and np.array_equal(self.timestamps_ms, other.timestamps_ms)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Session:
    """One segmented transcription sitting.

    Pressure frames lie within ``[start_ts_ms, end_ts_ms]``. Frames on the other
    channels may extend up to the idle timeout past either bound so that
    held physiological readings have a value at the session edges.
    """

    session_id: str
    participant_id: str
    device_id: str
    start_ts_ms: int
    end_ts_ms: int
    channels: dict[Channel, ChannelSeries] = field(default_factory=dict)
    calibration: CalibrationProfile | None = None

    def __post_init__(self) -> None:
        if self.start_ts_ms > self.end_ts_ms:
            raise ValueError("start_ts_ms > end_ts_ms")
        chans = {ch: self.channels.get(ch) or ChannelSeries.empty(ch) for ch in Channel}
        object.__setattr__(self, "channels", chans)
        p = chans[Channel.PRESSURE_RAW]
        if len(p) == 0:
            raise ValueError("session has no pressure samples")
        if p.timestamps_ms[0] < self.start_ts_ms or p.timestamps_ms[-1] > self.end_ts_ms:
            raise ValueError("pressure samples fall outside the session bounds")

    @property
    def duration_ms(self) -> int:
        return self.end_ts_ms - self.start_ts_ms

    @property
    def frame_count(self) -> int:
        return sum(len(s) for s in self.channels.values())

    def frames(self) -> list[SensorFrame]:
        """All samples as wire frames, ordered by timestamp then channel."""
        rows = []
        for ch, s in self.channels.items():
            rows.extend((t, ch.order, ch, v) for t, v in zip(s.timestamps_ms.tolist(), s.values.tolist()))
        rows.sort(key=lambda r: (r[0], r[1]))
        return [SensorFrame(self.device_id, ch, t, v) for t, _, ch, v in rows]

    def header(self) -> dict:
        return {
            "session_id": self.session_id,
            "participant_id": self.participant_id,
            "device_id": self.device_id,
            "start_ts_ms": self.start_ts_ms,
            "end_ts_ms": self.end_ts_ms,
            "calibration": self.calibration.to_dict() if self.calibration else None,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Session):
            return NotImplemented
        return self.header() == other.header() and self.channels == other.channels

    __hash__ = None  # type: ignore[assignment]
