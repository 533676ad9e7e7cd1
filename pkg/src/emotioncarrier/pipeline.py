"""Glue between the store, alignment, analytics and feedback stages."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable

from .analytics import (
    DEFAULT_WINDOW,
    CalmingVerdict,
    ClassifyThresholds,
    SessionMetrics,
    classify,
    trend_rows,
    session_metrics,
)
from .gateway import FeedbackReport, GatewayConfig, build_payload, generate_report
from .ingest import SegmenterConfig, segment_frames
from .session import Session
from .simulator import Cohort
from .store import SessionStore
from .telemetry import CalibrationProfile, SensorFrame, encode_frame
from .timeline import DEFAULT_GRID_STEP_MS, AlignedTimeline, align


def analyze_session(session: Session, grid_step_ms: int = DEFAULT_GRID_STEP_MS,
                    calibration: CalibrationProfile | None = None,
                    window: int = DEFAULT_WINDOW) -> tuple[AlignedTimeline, SessionMetrics]:
    tl = align(session, grid_step_ms, calibration)
    return tl, session_metrics(tl, window)


def metrics_json(metrics: SessionMetrics) -> str:
    return json.dumps(metrics.to_dict(), indent=2, allow_nan=False)


def store_metrics(store: SessionStore, ids: Iterable[str] | None = None, **kw: Any) -> list[SessionMetrics]:
    """Metrics for the given (default: all) stored sessions in start order."""
    ids = store.list_sessions() if ids is None else list(ids)
    return [analyze_session(store.load_session(sid), **kw)[1] for sid in ids]


def write_session_file(path: Path, frames: Iterable[SensorFrame]) -> int:
    n = 0
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(encode_frame(f))
            n += 1
    return n


def write_cohort(cohort: Cohort, out_dir: str | Path) -> list[Path]:
    """One frame-per-line file per session plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frames in enumerate(cohort.sessions()):
        p = out / f"session_{k:03d}.jsonl"
        write_session_file(p, frames)
        paths.append(p)
    (out / "manifest.json").write_text(json.dumps(cohort.manifest, indent=2) + "\n")
    return paths


def ingest_cohort(cohort: Cohort, store: SessionStore | None = None,
                  config: SegmenterConfig | None = None) -> list[Session]:
    """Segment every simulated session in-process, optionally persisting the results."""
    sessions: list[Session] = []
    for profile, frames in zip(cohort.profiles, cohort.sessions()):
        found = segment_frames(frames, config, participant_id=profile.participant_id)
        for s in found:
            if store is not None:
                store.append_session(s)
        sessions.extend(found)
    return sessions


def cohort_context(metrics: list[SessionMetrics], upto: int | None = None) -> list[dict[str, Any]]:
    rows = trend_rows(metrics if upto is None else metrics[: upto + 1])
    for row, m in zip(rows, metrics):
        row["session_id"] = m.session_id
    return rows


def build_report(store: SessionStore, session_id: str, gateway: GatewayConfig | None,
                 thresholds: ClassifyThresholds | None = None,
                 k: int = 10) -> tuple[SessionMetrics, CalmingVerdict, FeedbackReport]:
    """Metrics, verdict and feedback report for one stored session.

    Cohort context is the ``k`` most recent sessions up to and including this one.
    """
    ids = store.list_sessions()
    pos = ids.index(session_id) if session_id in ids else None
    if pos is None:
        metrics = analyze_session(store.load_session(session_id))[1]
        context: list[dict[str, Any]] = []
    else:
        window_ids = ids[max(0, pos - k + 1): pos + 1]
        all_m = store_metrics(store, window_ids)
        metrics = all_m[-1]
        context = cohort_context(all_m)
    verdict = classify(metrics, thresholds)
    payload = build_payload(metrics, verdict, context, cohort_k=k) if gateway is not None else None
    report = generate_report(metrics, verdict, payload, gateway)
    return metrics, verdict, report
