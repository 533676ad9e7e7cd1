"""Channel semantics, the line-oriented JSON wire codec, and load-cell calibration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

PROTOCOL_VERSION = 1
MAX_DEVICE_ID_LEN = 64
MAX_SEQ = 2**64 - 1

PRESSURE_MIN = -(2**23)
PRESSURE_MAX = 2**23 - 1


class Channel(str, Enum):
    PRESSURE_RAW = "pressure_raw"
    AUDIO_RMS = "audio_rms"
    HEART_RATE = "heart_rate"
    RESPIRATORY_RATE = "respiratory_rate"

    @property
    def order(self) -> int:
        return _CHANNEL_ORDER[self]


_CHANNEL_ORDER = {ch: i for i, ch in enumerate(Channel)}

# (low, high, low_inclusive, high_inclusive)
CHANNEL_RANGES: dict[Channel, tuple[float, float, bool, bool]] = {
    Channel.PRESSURE_RAW: (PRESSURE_MIN, PRESSURE_MAX, True, True),
    Channel.AUDIO_RMS: (0.0, 1.0, True, True),
    Channel.HEART_RATE: (20.0, 250.0, False, False),
    Channel.RESPIRATORY_RATE: (2.0, 60.0, False, False),
}


class FrameError(ValueError):
    """Base class for all frame codec errors."""


class InvalidFrame(FrameError):
    """Raised by the encoder when a frame breaks an invariant."""


class MalformedLine(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class UnknownChannel(FrameError):
    pass


class RangeViolation(FrameError):
    pass


def in_channel_range(channel: Channel, value: float) -> bool:
    lo, hi, lo_inc, hi_inc = CHANNEL_RANGES[channel]
    above = value >= lo if lo_inc else value > lo
    below = value <= hi if hi_inc else value < hi
    return above and below


@dataclass(frozen=True)
class SensorFrame:
    """One timestamped sample on one channel from one device."""

    device_id: str
    channel: Channel
    timestamp_ms: int
    value: float
    seq: int | None = None
    protocol_version: int = PROTOCOL_VERSION

    def problems(self) -> list[tuple[type[FrameError], str]]:
        """Return every invariant violation as (error class, message) pairs."""
        out: list[tuple[type[FrameError], str]] = []
        if self.protocol_version != PROTOCOL_VERSION:
            out.append((UnsupportedVersion, f"protocol version {self.protocol_version!r}"))
        if not isinstance(self.device_id, str) or not self.device_id:
            out.append((MalformedLine, "device id must be a non-empty string"))
        elif len(self.device_id) > MAX_DEVICE_ID_LEN:
            out.append((MalformedLine, f"device id longer than {MAX_DEVICE_ID_LEN} chars"))
        if not isinstance(self.channel, Channel):
            out.append((UnknownChannel, f"unknown channel {self.channel!r}"))
        if not _is_int(self.timestamp_ms):
            out.append((MalformedLine, "timestamp must be an integer"))
        elif self.timestamp_ms < 0:
            out.append((RangeViolation, f"negative timestamp {self.timestamp_ms}"))
        if self.seq is not None and (not _is_int(self.seq) or not 0 <= self.seq <= MAX_SEQ):
            out.append((MalformedLine, f"seq {self.seq!r} is not an unsigned 64-bit integer"))
        if not _is_number(self.value):
            out.append((MalformedLine, f"value {self.value!r} is not a number"))
        elif not math.isfinite(self.value):
            out.append((RangeViolation, f"value {self.value!r} is not finite"))
        elif isinstance(self.channel, Channel) and not in_channel_range(self.channel, self.value):
            out.append((RangeViolation, f"{self.channel.value} value {self.value!r} out of range"))
        return out

    def is_valid(self) -> bool:
        return not self.problems()


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _format_value(value: float) -> str:
    # integral floats go out as JSON integers so raw converter counts read naturally
    if isinstance(value, int):
        return str(value)
    if value.is_integer() and abs(value) < 2**53 and not (value == 0 and math.copysign(1.0, value) < 0):
        return str(int(value))
    return repr(value)


def encode_frame(frame: SensorFrame) -> bytes:
    """Serialize ``frame`` as one LF-terminated wire line.

    Raises InvalidFrame if the frame breaks any invariant.
    """
    problems = frame.problems()
    if problems:
        raise InvalidFrame("; ".join(msg for _, msg in problems))
    parts = [
        f'"v":{frame.protocol_version}',
        f'"device":{json.dumps(frame.device_id, ensure_ascii=False)}',
        f'"ch":"{frame.channel.value}"',
        f'"ts":{frame.timestamp_ms}',
        f'"val":{_format_value(frame.value)}',
    ]
    if frame.seq is not None:
        parts.append(f'"seq":{frame.seq}')
    return ("{" + ",".join(parts) + "}\n").encode("utf-8")


def _reject_constant(name: str) -> float:
    # json accepts NaN/Infinity literals; keep them so they surface as range errors
    return float(name)


def parse_json_line(line: bytes | str) -> Any:
    """Parse one line as JSON; raises MalformedLine on any decoding failure."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(f"not UTF-8: {exc}") from None
    text = line.rstrip("\r\n")
    if "\n" in text:
        raise MalformedLine("interior newline")
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedLine(f"not JSON: {exc}") from None


def frame_from_obj(obj: Any) -> SensorFrame:
    """Build and validate a frame from an already-parsed JSON object."""
    if not isinstance(obj, dict):
        raise MalformedLine("line is not a JSON object")
    for key in ("v", "device", "ch", "ts", "val"):
        if key not in obj:
            raise MalformedLine(f"missing key {key!r}")
    version = obj["v"]
    if not _is_int(version):
        raise MalformedLine(f"version {version!r} is not an integer")
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"protocol version {version}")
    ch = obj["ch"]
    if not isinstance(ch, str):
        raise MalformedLine("channel must be a string")
    try:
        channel = Channel(ch)
    except ValueError:
        raise UnknownChannel(f"unknown channel {ch!r}") from None

    ts = obj["ts"]
    if isinstance(ts, float) and math.isfinite(ts) and ts.is_integer():
        ts = int(ts)
    val = obj["val"]
    if _is_number(val):
        val = float(val)
    seq = obj.get("seq")
    if isinstance(seq, float) and math.isfinite(seq) and seq.is_integer():
        seq = int(seq)

    frame = SensorFrame(
        device_id=obj["device"],
        channel=channel,
        timestamp_ms=ts,
        value=val,
        seq=seq,
        protocol_version=version,
    )
    problems = frame.problems()
    if problems:
        cls, msg = problems[0]
        raise cls(msg)
    return frame


def decode_frame(line: bytes | str) -> SensorFrame:
    """Parse one wire line into a validated frame.

    Key order and whitespace are free; unknown keys are ignored. Raises
    MalformedLine, UnsupportedVersion, UnknownChannel or RangeViolation.
    """
    return frame_from_obj(parse_json_line(line))


@dataclass(frozen=True)
class CalibrationProfile:
    """Tare offset and scale factor mapping converter counts to gram-force."""

    device_id: str = "*"
    offset_counts: float = 8400.0
    scale_counts_per_gf: float = 420.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.scale_counts_per_gf) or self.scale_counts_per_gf == 0:
            raise ValueError("scale_counts_per_gf must be finite and non-zero")
        if not math.isfinite(self.offset_counts):
            raise ValueError("offset_counts must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "device_id": self.device_id,
            "offset_counts": self.offset_counts,
            "scale_counts_per_gf": self.scale_counts_per_gf,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CalibrationProfile:
        return cls(
            device_id=str(d.get("device_id", "*")),
            offset_counts=float(d["offset_counts"]),
            scale_counts_per_gf=float(d["scale_counts_per_gf"]),
        )


DEFAULT_CALIBRATION = CalibrationProfile()


def calibrate_pressure(raw_counts, profile: CalibrationProfile):
    """Convert raw counts (scalar or array) to gram-force. Negative force is not clamped."""
    return (raw_counts - profile.offset_counts) / profile.scale_counts_per_gf
