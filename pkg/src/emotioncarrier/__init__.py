"""Calligraphy-session biofeedback: simulated telemetry, ingestion, analytics and feedback."""

from .analytics import (
    CalmingVerdict,
    CohortTrend,
    SessionMetrics,
    classify,
    cohort_trend,
    linreg,
    pearson,
    rolling_std,
    session_metrics,
    stabilization_index,
)
from .gateway import FeedbackReport, GatewayConfig, build_payload, request_feedback, template_feedback
from .ingest import IngestServer, Segmenter, SegmenterConfig, replay, segment_frames, serve
from .session import ChannelSeries, Session
from .simulator import ChannelProfile, CohortSpec, SimProfile, generate_cohort, generate_session
from .store import SessionStore
from .telemetry import CalibrationProfile, Channel, SensorFrame, calibrate_pressure, decode_frame, encode_frame
from .timeline import AlignedTimeline, align, interpolate_linear

__version__ = "0.1.0"
