"""
Feedback reports with a local mock gateway
==========================================

Build the payload for one session, ask the in-process mock chat server for
prompt words, then point the client at a dead port to see the template
fallback.
"""

import socket

from emotioncarrier import simulator
from emotioncarrier.analytics import classify, session_metrics
from emotioncarrier.gateway import GatewayConfig, build_payload, generate_report
from emotioncarrier.ingest import segment_frames
from emotioncarrier.mock_gateway import MockGateway
from emotioncarrier.timeline import align

(session,) = segment_frames(simulator.generate_session(simulator.calming_profile(seed=5)))
metrics = session_metrics(align(session))
verdict = classify(metrics)
payload = build_payload(metrics, verdict)
print(f"verdict {verdict.verdict}, payload {payload.size} bytes")

with MockGateway() as gw:
    report = generate_report(metrics, verdict, payload, GatewayConfig(gw.endpoint))
print(report.source, report.prompt_words, report.narrative)

with socket.socket() as s:
    s.bind(("127.0.0.1", 0))
    dead = s.getsockname()[1]
cfg = GatewayConfig(f"http://127.0.0.1:{dead}", timeout_ms=500, max_retries=1)
report = generate_report(metrics, verdict, payload, cfg)
print(report.source, report.prompt_words)
print(report.narrative)
