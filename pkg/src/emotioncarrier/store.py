"""Directory-backed session store.

Layout::

    root/
      index.jsonl                 one line per closed session
      sessions/<session_id>.jsonl header record, wire frames, end record
      reports/<session_id>.json
      store.lock                  held by the single writer

Session files are written to a hidden temp file and renamed into place; the
index line is appended only after the rename, so a crash leaves at most an
orphaned temp file or an unindexed complete file, both repaired on the next
writer open.
"""

from __future__ import annotations

import fcntl
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .session import ChannelSeries, Session
from .telemetry import CalibrationProfile, Channel, FrameError, encode_frame, frame_from_obj, parse_json_line

STORE_VERSION = 1


class StoreError(Exception):
    pass


class NotFound(StoreError, KeyError):
    pass


class Conflict(StoreError):
    pass


class CorruptFile(StoreError):
    pass


class StorageFull(StoreError):
    pass


class StoreLocked(StoreError):
    pass


@dataclass(frozen=True)
class IndexEntry:
    session_id: str
    participant_id: str
    device_id: str
    start_ts_ms: int
    end_ts_ms: int
    frames: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, separators=(",", ":"))


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def session_lines(session: Session) -> list[bytes]:
    header = {"type": "session_header", "v": STORE_VERSION, "session": session.header()}
    lines = [(_dumps(header) + "\n").encode()]
    frames = session.frames()
    lines.extend(encode_frame(f) for f in frames)
    lines.append((_dumps({"type": "session_end", "frames": len(frames)}) + "\n").encode())
    return lines


def parse_session_file(path: Path) -> Session:
    try:
        raw_lines = path.read_bytes().split(b"\n")
    except FileNotFoundError:
        raise NotFound(path.stem) from None
    if raw_lines and raw_lines[-1] == b"":
        raw_lines.pop()
    else:
        raise CorruptFile(f"{path}: last line not terminated")
    if len(raw_lines) < 2:
        raise CorruptFile(f"{path}: missing header or end record")
    try:
        header = parse_json_line(raw_lines[0])
        end = parse_json_line(raw_lines[-1])
    except FrameError as exc:
        raise CorruptFile(f"{path}: {exc}") from None
    if not (isinstance(header, dict) and header.get("type") == "session_header"):
        raise CorruptFile(f"{path}: no header record")
    if not (isinstance(end, dict) and end.get("type") == "session_end"):
        raise CorruptFile(f"{path}: no end record")
    body = raw_lines[1:-1]
    if end.get("frames") != len(body):
        raise CorruptFile(f"{path}: end record counts {end.get('frames')} frames, found {len(body)}")

    meta = header["session"]
    rows: dict[Channel, tuple[list[int], list[float]]] = {ch: ([], []) for ch in Channel}
    for lineno, line in enumerate(body, 2):
        try:
            obj = parse_json_line(line)
            if isinstance(obj, dict) and "type" in obj and "ch" not in obj:
                raise CorruptFile(f"{path}:{lineno}: unexpected {obj['type']} record")
            f = frame_from_obj(obj)
        except FrameError as exc:
            raise CorruptFile(f"{path}:{lineno}: {exc}") from None
        ts, vals = rows[f.channel]
        if ts and f.timestamp_ms <= ts[-1]:
            raise CorruptFile(f"{path}:{lineno}: {f.channel.value} timestamps out of order")
        ts.append(f.timestamp_ms)
        vals.append(f.value)
    cal = meta.get("calibration")
    try:
        return Session(
            session_id=meta["session_id"],
            participant_id=meta["participant_id"],
            device_id=meta["device_id"],
            start_ts_ms=int(meta["start_ts_ms"]),
            end_ts_ms=int(meta["end_ts_ms"]),
            channels={ch: ChannelSeries(ch, np.asarray(t, dtype=np.int64), np.asarray(v, dtype=float))
                      for ch, (t, v) in rows.items()},
            calibration=CalibrationProfile.from_dict(cal) if cal else None,
        )
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from None


class SessionStore:
    """Sessions, the index, and feedback reports under one root directory.

    Opening with ``writer=True`` takes an exclusive lock on ``store.lock``
    (released when the process exits or ``close`` is called) and repairs any
    state a crashed writer left behind. Readers take no lock.
    """

    def __init__(self, root: str | Path, writer: bool = False):
        self.root = Path(root)
        self.sessions_dir = self.root / "sessions"
        self.reports_dir = self.root / "reports"
        self.index_path = self.root / "index.jsonl"
        self.writer = writer
        self._lock_fh = None
        if writer:
            self.sessions_dir.mkdir(parents=True, exist_ok=True)
            self.reports_dir.mkdir(parents=True, exist_ok=True)
            self._lock_fh = open(self.root / "store.lock", "a+")
            try:
                fcntl.flock(self._lock_fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                self._lock_fh.close()
                self._lock_fh = None
                raise StoreLocked(f"{self.root} is locked by another writer") from None
            self.recover()

    def close(self) -> None:
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    def __enter__(self) -> SessionStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _require_writer(self) -> None:
        if not self.writer or self._lock_fh is None:
            raise StoreError("store opened read-only")

    def session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.jsonl"

    def _read_index(self) -> list[IndexEntry]:
        if not self.index_path.exists():
            return []
        entries = []
        for line in self.index_path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                entries.append(IndexEntry(**json.loads(line)))
            except (json.JSONDecodeError, TypeError):
                continue  # torn trailing write; recover() rewrites the index
        return entries

    def _append_index(self, entry: IndexEntry) -> None:
        with open(self.index_path, "a") as fh:
            fh.write(entry.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def recover(self) -> None:
        """Drop temp files and make the index match the set of complete session files."""
        self._require_writer()
        for tmp in self.sessions_dir.glob(".*.tmp"):
            tmp.unlink()
        entries = {e.session_id: e for e in self._read_index()}
        changed = False
        for path in sorted(self.sessions_dir.glob("*.jsonl")):
            sid = path.stem
            if sid in entries:
                continue
            try:
                s = parse_session_file(path)
            except CorruptFile:
                continue
            entries[sid] = _entry(s)
            changed = True
        for sid in list(entries):
            if not self.session_path(sid).exists():
                del entries[sid]
                changed = True
        raw = self.index_path.read_text() if self.index_path.exists() else ""
        if changed or (raw and not raw.endswith("\n")) or len(raw.splitlines()) != len(entries):
            ordered = sorted(entries.values(), key=lambda e: (e.start_ts_ms, e.session_id))
            tmp = self.root / ".index.jsonl.tmp"
            tmp.write_text("".join(e.to_json() + "\n" for e in ordered))
            os.replace(tmp, self.index_path)

    def append_session(self, session: Session) -> str:
        """Persist a closed session; raises Conflict if its id is already stored."""
        self._require_writer()
        sid = session.session_id
        final = self.session_path(sid)
        if final.exists():
            raise Conflict(f"session {sid} already stored")
        tmp = self.sessions_dir / f".{sid}.jsonl.tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.writelines(session_lines(session))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, final)
        except OSError as exc:
            if tmp.exists():
                tmp.unlink()
            if exc.errno in (28, 122):  # ENOSPC, EDQUOT
                raise StorageFull(str(exc)) from exc
            raise
        self._append_index(_entry(session))
        return sid

    def load_session(self, session_id: str) -> Session:
        if session_id not in {e.session_id for e in self._read_index()}:
            raise NotFound(session_id)
        return parse_session_file(self.session_path(session_id))

    def list_sessions(self, participant: str | None = None, start_ms: int | None = None,
                      end_ms: int | None = None) -> list[str]:
        """Session ids sorted by start time; filters are conjunctive.

        The time filter keeps sessions starting within ``[start_ms, end_ms]``.
        """
        entries = self._read_index()
        if participant is not None:
            entries = [e for e in entries if e.participant_id == participant]
        if start_ms is not None:
            entries = [e for e in entries if e.start_ts_ms >= start_ms]
        if end_ms is not None:
            entries = [e for e in entries if e.start_ts_ms <= end_ms]
        entries.sort(key=lambda e: (e.start_ts_ms, e.session_id))
        return [e.session_id for e in entries]

    def entries(self) -> list[IndexEntry]:
        return sorted(self._read_index(), key=lambda e: (e.start_ts_ms, e.session_id))

    def save_report(self, session_id: str, report: dict[str, Any]) -> Path:
        self._require_writer()
        path = self.reports_dir / f"{session_id}.json"
        tmp = self.reports_dir / f".{session_id}.json.tmp"
        tmp.write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n")
        os.replace(tmp, path)
        return path

    def load_report(self, session_id: str) -> dict[str, Any]:
        path = self.reports_dir / f"{session_id}.json"
        if not path.exists():
            raise NotFound(session_id)
        return json.loads(path.read_text())


def _entry(s: Session) -> IndexEntry:
    return IndexEntry(s.session_id, s.participant_id, s.device_id, s.start_ts_ms, s.end_ts_ms, s.frame_count)

