"""Stream ingestion: per-device segmentation, the TCP collector, and replay."""

from __future__ import annotations

import heapq
import json
import logging
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .session import ChannelSeries, Session, make_session_id
from .telemetry import (
    DEFAULT_CALIBRATION,
    CalibrationProfile,
    Channel,
    FrameError,
    SensorFrame,
    calibrate_pressure,
    encode_frame,
    frame_from_obj,
    parse_json_line,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 7071
DEFAULT_PARTICIPANT = "anonymous"


class StaleFrame(Exception):
    """Frame arrived more than the out-of-order window behind the newest frame."""


class BindFailure(OSError):
    pass


class MalformedFile(ValueError):
    pass


@dataclass(frozen=True)
class SegmenterConfig:
    pressure_threshold_gf: float = 5.0
    arm_count: int = 3
    idle_timeout_ms: int = 30_000
    calibration: CalibrationProfile = DEFAULT_CALIBRATION
    max_out_of_order_ms: int = 2_000

    def __post_init__(self) -> None:
        if not self.pressure_threshold_gf > 0:
            raise ValueError("pressure_threshold_gf must be > 0")
        if self.arm_count < 1:
            raise ValueError("arm_count must be >= 1")
        if self.idle_timeout_ms <= 0 or self.max_out_of_order_ms <= 0:
            raise ValueError("timeouts must be > 0")


@dataclass(frozen=True)
class Opened:
    device_id: str
    start_ts_ms: int


@dataclass(frozen=True)
class Closed:
    session: Session


@dataclass
class SegmenterStats:
    received: int = 0
    stale: int = 0
    duplicate: int = 0
    attached: int = 0
    discarded: int = 0



class Segmenter:
    """Hysteresis state machine turning one device's frame stream into sessions.

    Frames pass through a reordering heap; a frame is released to the state
    machine once the newest timestamp is more than ``max_out_of_order_ms``
    ahead of it. Only frame timestamps are consulted, never the wall clock.
    """

    def __init__(self, device_id: str, config: SegmenterConfig | None = None,
                 participant_id: str = DEFAULT_PARTICIPANT):
        self.device_id = device_id
        self.config = config or SegmenterConfig()
        self.participant_id = participant_id
        self.stats = SegmenterStats()
        self._heap: list[tuple[int, int, int, SensorFrame]] = []
        self._arrivals = 0
        self._newest: int | None = None
        self._last_released: dict[Channel, int] = {}
        self._active = False
        self._arm: list[tuple[int, float]] = []
        self._pre: deque[SensorFrame] = deque()
        self._pending_pressure: list[tuple[int, float]] = []
        self._start = 0
        self._last_above = 0
        self._samples: dict[Channel, list[tuple[int, float]]] = {}

    @property
    def active(self) -> bool:
        return self._active

    def buffered_count(self) -> int:
        """Frames held in the reorder heap or the not-yet-closed session state."""
        return (len(self._heap) + len(self._arm) + len(self._pre) + len(self._pending_pressure)
                + sum(len(v) for v in self._samples.values()))

    def feed(self, frame: SensorFrame) -> list[Opened | Closed]:
        """Accept one frame; raises StaleFrame if it is too far behind the newest."""
        self.stats.received += 1
        cfg = self.config
        if self._newest is not None and frame.timestamp_ms < self._newest - cfg.max_out_of_order_ms:
            self.stats.stale += 1
            raise StaleFrame(f"frame at {frame.timestamp_ms} is behind newest {self._newest}")
        if self._newest is None or frame.timestamp_ms > self._newest:
            self._newest = frame.timestamp_ms
        heapq.heappush(self._heap, (frame.timestamp_ms, frame.channel.order, self._arrivals, frame))
        self._arrivals += 1
        events: list[Opened | Closed] = []
        horizon = self._newest - cfg.max_out_of_order_ms
        while self._heap and self._heap[0][0] < horizon:
            events.extend(self._release(heapq.heappop(self._heap)[3]))
        return events

    def flush(self) -> list[Opened | Closed]:
        """Drain the reorder buffer and close any open session at stream end."""
        events: list[Opened | Closed] = []
        while self._heap:
            events.extend(self._release(heapq.heappop(self._heap)[3]))
        if self._active:
            events.append(self._close())
        self.stats.discarded += len(self._arm) + len(self._pre)
        self._arm.clear()
        self._pre.clear()
        return events

    def _release(self, frame: SensorFrame) -> list[Opened | Closed]:
        ch, ts = frame.channel, frame.timestamp_ms
        last = self._last_released.get(ch)
        if last is not None and ts <= last:
            self.stats.duplicate += 1
            return []
        self._last_released[ch] = ts
        cfg = self.config
        events: list[Opened | Closed] = []

        if self._active and ts - self._last_above > cfg.idle_timeout_ms:
            events.append(self._close())

        if ch is not Channel.PRESSURE_RAW:
            if self._active:
                self._add(ch, ts, frame.value)
            else:
                self._pre.append(frame)
                self._prune_pre(ts)
            return events

        above = calibrate_pressure(frame.value, cfg.calibration) > cfg.pressure_threshold_gf
        if self._active:
            if above:
                for t, v in self._pending_pressure:
                    self._add(ch, t, v)
                self._pending_pressure.clear()
                self._add(ch, ts, frame.value)
                self._last_above = ts
            else:
                self._pending_pressure.append((ts, frame.value))
            return events

        if not above:
            self.stats.discarded += len(self._arm) + 1
            self._arm.clear()
            self._prune_pre(ts)
            return events
        self._arm.append((ts, frame.value))
        if len(self._arm) >= cfg.arm_count:
            events.append(self._open())
        else:
            self._prune_pre(ts)
        return events

    def _prune_pre(self, now: int) -> None:
        anchor = self._arm[0][0] if self._arm else now
        cutoff = anchor - self.config.idle_timeout_ms
        while self._pre and self._pre[0].timestamp_ms < cutoff:
            self._pre.popleft()
            self.stats.discarded += 1

    def _add(self, ch: Channel, ts: int, value: float) -> None:
        self._samples.setdefault(ch, []).append((ts, value))

    def _open(self) -> Opened:
        self._active = True
        self._start = self._arm[0][0]
        self._last_above = self._arm[-1][0]
        self._samples = {}
        self._prune_pre(self._start)
        for f in self._pre:
            self._add(f.channel, f.timestamp_ms, f.value)
        self._pre.clear()
        for ts, v in self._arm:
            self._add(Channel.PRESSURE_RAW, ts, v)
        self._arm.clear()
        return Opened(self.device_id, self._start)

    def _close(self) -> Closed:
        self._active = False
        self.stats.discarded += len(self._pending_pressure)
        self._pending_pressure.clear()
        channels = {}
        for ch, rows in self._samples.items():
            channels[ch] = ChannelSeries(ch, [r[0] for r in rows], [r[1] for r in rows])
        self.stats.attached += sum(len(s) for s in channels.values())
        self._samples = {}
        session = Session(
            session_id=make_session_id(self._start, self.device_id, self.participant_id),
            participant_id=self.participant_id,
            device_id=self.device_id,
            start_ts_ms=self._start,
            end_ts_ms=self._last_above,
            channels=channels,
            calibration=self.config.calibration,
        )
        return Closed(session)


def feed_frame(state: Segmenter, frame: SensorFrame) -> list[Opened | Closed]:
    return state.feed(frame)


def segment_frames(frames: Iterable[SensorFrame], config: SegmenterConfig | None = None,
                   participant_id: str = DEFAULT_PARTICIPANT) -> list[Session]:
    """Run frames through per-device segmenters in-process and return closed sessions."""
    segs: dict[str, Segmenter] = {}
    sessions: list[Session] = []
    for f in frames:
        seg = segs.get(f.device_id)
        if seg is None:
            seg = segs[f.device_id] = Segmenter(f.device_id, config, participant_id)
        try:
            events = seg.feed(f)
        except StaleFrame:
            continue
        sessions.extend(e.session for e in events if isinstance(e, Closed))
    for seg in segs.values():
        sessions.extend(e.session for e in seg.flush() if isinstance(e, Closed))
    sessions.sort(key=lambda s: (s.start_ts_ms, s.device_id))
    return sessions


def parse_address(addr: str, default_port: int = DEFAULT_PORT) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        return addr, default_port
    return host or "127.0.0.1", int(port)


# -- TCP collector ---------------------------------------------------------


@dataclass
class ServerStats:
    connections: int = 0
    lines: int = 0
    frames: int = 0
    invalid_lines: int = 0
    stale: int = 0
    rejected_connections: int = 0
    sessions: int = 0
    store_errors: int = 0


class _Handler(socketserver.StreamRequestHandler):
    server: IngestServer

    def handle(self) -> None:
        srv = self.server
        srv._register(self)
        participant = DEFAULT_PARTICIPANT
        owned: dict[str, Segmenter] = {}
        first = True
        try:
            for raw in self.rfile:
                if not raw.strip():
                    continue
                srv._bump("lines")
                try:
                    obj = parse_json_line(raw)
                    if first and isinstance(obj, dict) and "hello" in obj:
                        first = False
                        hello = obj["hello"]
                        if isinstance(hello, dict) and isinstance(hello.get("participant"), str):
                            participant = hello["participant"]
                        continue
                    first = False
                    frame = frame_from_obj(obj)
                except FrameError as exc:
                    srv._bump("invalid_lines")
                    log.debug("invalid line from %s: %s", self.client_address, exc)
                    continue
                seg = owned.get(frame.device_id)
                if seg is None:
                    if not srv._claim(frame.device_id, self):
                        srv._bump("rejected_connections")
                        log.warning("device %s already streaming on another connection; closing %s",
                                    frame.device_id, self.client_address)
                        return
                    seg = owned[frame.device_id] = Segmenter(frame.device_id, srv.config, participant)
                srv._bump("frames")
                try:
                    events = seg.feed(frame)
                except StaleFrame:
                    srv._bump("stale")
                    continue
                srv._persist(events)
        except (ConnectionError, OSError) as exc:
            log.info("connection %s ended: %s", self.client_address, exc)
        finally:
            for dev, seg in owned.items():
                srv._persist(seg.flush())
                srv._release(dev)
            srv._unregister(self)


class IngestServer(socketserver.ThreadingTCPServer):
    """Threaded TCP collector persisting closed sessions into a store.

    Segmenter state is per device; a device may be streamed by only one
    connection at a time. Store appends go through a single lock.
    """

    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True

    def __init__(self, address: tuple[str, int], store, config: SegmenterConfig | None = None):
        self.store = store
        self.config = config or SegmenterConfig()
        self.stats = ServerStats()
        self.sessions: list[Session] = []
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._owners: dict[str, _Handler] = {}
        self._handlers: set[_Handler] = set()
        self._stopping = threading.Event()
        self._thread: threading.Thread | None = None
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {address[0]}:{address[1]}: {exc}") from exc

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def _bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            setattr(self.stats, name, getattr(self.stats, name) + n)

    def _register(self, h: _Handler) -> None:
        with self._lock:
            self._handlers.add(h)
            self.stats.connections += 1

    def _unregister(self, h: _Handler) -> None:
        with self._lock:
            self._handlers.discard(h)

    def _claim(self, device_id: str, h: _Handler) -> bool:
        with self._lock:
            owner = self._owners.get(device_id)
            if owner is not None and owner is not h:
                return False
            self._owners[device_id] = h
            return True

    def _release(self, device_id: str) -> None:
        with self._lock:
            self._owners.pop(device_id, None)

    def _persist(self, events: list[Opened | Closed]) -> None:
        for ev in events:
            if not isinstance(ev, Closed):
                continue
            with self._write_lock:
                try:
                    if self.store is not None:
                        self.store.append_session(ev.session)
                except Exception:
                    log.exception("failed to persist session %s", ev.session.session_id)
                    self._bump("store_errors")
                    continue
                self.sessions.append(ev.session)
            self._bump("sessions")
            log.info("session %s closed (%d frames)", ev.session.session_id, ev.session.frame_count)

    def start(self) -> IngestServer:
        """Serve in a background thread."""
        self._thread = threading.Thread(target=self.serve_forever, name="ingest-accept", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        """Stop accepting, end open connections, flush their sessions, and close."""
        self._stopping.set()
        self.shutdown()
        with self._lock:
            handlers = list(self._handlers)
        for h in handlers:
            try:
                h.connection.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> IngestServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(listen_address: tuple[str, int], store, segmenter_config: SegmenterConfig | None = None) -> IngestServer:
    """Bind the collector and start serving in the background."""
    return IngestServer(listen_address, store, segmenter_config).start()


# -- replay ----------------------------------------------------------------


def read_frame_file(path: str | Path) -> tuple[list[SensorFrame], str | None]:
    """Frames from a frame-per-line file (store session files included) and any participant it names."""
    frames: list[SensorFrame] = []
    participant = None
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = parse_json_line(raw)
                if isinstance(obj, dict) and "type" in obj and "ch" not in obj:
                    if obj["type"] == "session_header":
                        participant = obj.get("session", {}).get("participant_id")
                    continue
                if isinstance(obj, dict) and "hello" in obj:
                    participant = obj["hello"].get("participant")
                    continue
                frames.append(frame_from_obj(obj))
            except (FrameError, AttributeError) as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from None
    return frames, participant


def send_frames(frames: list[SensorFrame], target: tuple[str, int], speed: float | str = "max",
                participant: str | None = None) -> int:
    """Stream frames over TCP in timestamp order, pacing gaps by 1/speed.

    Returns the number of frames sent. Raises ConnectionRefusedError if
    nothing listens at ``target``.
    """
    ordered = sorted(frames, key=lambda f: (f.timestamp_ms, f.channel.order))
    paced = speed != "max"
    factor = 0.0 if not paced else 1.0 / float(speed)
    with socket.create_connection(target) as sock:
        if participant is not None:
            sock.sendall(json.dumps({"v": 1, "hello": {"participant": participant}},
                                    separators=(",", ":")).encode() + b"\n")
        if not ordered:
            return 0
        if not paced:
            chunk: list[bytes] = []
            for f in ordered:
                chunk.append(encode_frame(f))
                if len(chunk) >= 4096:
                    sock.sendall(b"".join(chunk))
                    chunk.clear()
            if chunk:
                sock.sendall(b"".join(chunk))
        else:
            t0_wall = time.monotonic()
            t0 = ordered[0].timestamp_ms
            for f in ordered:
                due = t0_wall + (f.timestamp_ms - t0) / 1000.0 * factor
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                sock.sendall(encode_frame(f))
        sock.shutdown(socket.SHUT_WR)
        # wait for the server to close so its flush has completed
        sock.settimeout(30)
        try:
            while sock.recv(4096):
                pass
        except OSError:
            pass
    return len(ordered)


def replay(file: str | Path, target_address: tuple[str, int], speed_multiplier: float | str = "max",
           participant: str | None = None) -> int:
    frames, named = read_frame_file(file)
    return send_frames(frames, target_address, speed_multiplier, participant or named)
