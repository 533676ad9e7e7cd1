import json
import logging
import socket
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from emotioncarrier.analytics import CalmingVerdict, ChannelMetrics, SessionMetrics, classify
from emotioncarrier.gateway import (
    BadStatus,
    FeedbackReport,
    GatewayConfig,
    GatewayTimeout,
    GatewayUnreachable,
    PayloadTooLarge,
    UnparseableReply,
    build_payload,
    extract_json_object,
    generate_report,
    request_feedback,
    round_sig,
    template_feedback,
)
from emotioncarrier.mock_gateway import MockGateway

SECRET = "sk-test-0123456789abcdef-do-not-leak"


def metrics(hr=-1.5, rr=-0.4, stab=0.4, sid="01TESTSESSION0000000000000"):
    return SessionMetrics(sid, 600.0, {
        "pressure_gf": ChannelMetrics(10.123456, 1.5, 0.2, 0.93, 0.5, 0.0),
        "audio_rms": ChannelMetrics(0.0812345, 0.01, -0.001, -0.9, stab, 0.0),
        "heart_rate": ChannelMetrics(75.55555, 3.0, hr, None, 0.8, 0.0),
        "respiratory_rate": ChannelMetrics(17.0, 1.0, rr, None, 0.8, 0.0),
    })


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def calm():
    m = metrics()
    return m, classify(m)


# -- payload ---------------------------------------------------------------


def test_round_sig():
    assert round_sig(75.55555) == 75.56
    assert round_sig(0.0812345) == 0.08123
    assert round_sig(123456.0) == 123500.0
    assert round_sig(None) is None


def test_payload_is_deterministic_and_rounded(calm):
    m, v = calm
    rows = [{"session_index": k, "mean_audio_rms": 0.1 + k / 3} for k in range(20)]
    a = build_payload(m, v, rows)
    b = build_payload(m, v, rows)
    assert a.text == b.text
    assert len(a.document["cohort"]) == 10
    assert a.document["cohort"][0]["session_index"] == 10
    assert a.document["metrics"]["channels"]["heart_rate"]["mean"] == 75.56
    assert a.document["cohort"][0]["mean_audio_rms"] == 3.433
    assert json.loads(a.text) == a.document


def test_payload_missing_channel_is_null(calm):
    m, v = calm
    chans = dict(m.channels)
    chans["heart_rate"] = ChannelMetrics(missing_fraction=1.0)
    p = build_payload(SessionMetrics(m.session_id, 600.0, chans), v)
    assert '"heart_rate":null' in p.text


def test_payload_too_large(calm):
    m, v = calm
    rows = [{"session_index": k, "mean_audio_rms": 0.1} for k in range(1000)]
    with pytest.raises(PayloadTooLarge):
        build_payload(m, v, rows, cohort_k=10**6)


# -- reply parsing ---------------------------------------------------------


def test_extract_json_from_prose():
    text = 'Sure! Here it is: {"prompt_words": ["a}b", "c"], "narrative": "x {y}"} Hope that helps {not json}'
    assert extract_json_object(text) == {"prompt_words": ["a}b", "c"], "narrative": "x {y}"}
    assert extract_json_object('{bad} then {"k": 1}') == {"k": 1}
    with pytest.raises(UnparseableReply):
        extract_json_object("no braces at all")


def test_report_validation():
    with pytest.raises(ValueError):
        FeedbackReport("s", (), "x", "llm", "calming")
    with pytest.raises(ValueError):
        FeedbackReport("s", tuple("abcdef"), "x", "llm", "calming")
    with pytest.raises(ValueError):
        FeedbackReport("s", ("a",), "x" * 601, "llm", "calming")


# -- HTTP ------------------------------------------------------------------


def test_mock_reply_gives_llm_report(calm, monkeypatch):
    monkeypatch.setenv("EMOTIONCARRIER_API_KEY", SECRET)
    m, v = calm
    with MockGateway() as gw:
        rep = request_feedback(build_payload(m, v), GatewayConfig(gw.endpoint), v.verdict)
    assert rep.source == "llm"
    assert rep.prompt_words == ("calm", "steady")
    (req,) = gw.requests
    assert req["path"] == "/v1/chat/completions"
    assert req["headers"]["Authorization"] == f"Bearer {SECRET}"
    assert req["body"]["messages"][1]["content"] == build_payload(m, v).text


def test_prose_wrapped_reply(calm):
    m, v = calm
    reply = 'Here you go:\n```json\n{"prompt_words": ["calm"], "narrative": "ok"}\n```'
    with MockGateway(reply=reply) as gw:
        rep = request_feedback(build_payload(m, v), GatewayConfig(gw.endpoint), v.verdict)
    assert rep.prompt_words == ("calm",) and rep.narrative == "ok"


@pytest.mark.parametrize("reply", ["just prose", '{"prompt_words": [], "narrative": "x"}',
                                   '{"prompt_words": ["a","b","c","d","e","f"], "narrative": "x"}'])
def test_unparseable_reply_not_retried(calm, reply):
    m, v = calm
    with MockGateway(reply=reply) as gw:
        with pytest.raises(UnparseableReply):
            request_feedback(build_payload(m, v), GatewayConfig(gw.endpoint, max_retries=2), v.verdict)
    assert len(gw.requests) == 1


def test_unreachable_retries_with_backoff(calm):
    m, v = calm
    cfg = GatewayConfig(f"http://127.0.0.1:{free_port()}", timeout_ms=1000, max_retries=2)
    t0 = time.monotonic()
    with pytest.raises(GatewayUnreachable):
        request_feedback(build_payload(m, v), cfg)
    assert time.monotonic() - t0 >= sum(cfg.backoff_schedule()) == 0.75


def test_timeout(calm):
    m, v = calm
    with MockGateway(delay_s=1.0) as gw:
        cfg = GatewayConfig(gw.endpoint, timeout_ms=200, max_retries=0)
        t0 = time.monotonic()
        with pytest.raises(GatewayTimeout):
            request_feedback(build_payload(m, v), cfg)
        assert time.monotonic() - t0 < 1.0


@pytest.mark.parametrize("status,retried", [(500, True), (503, True), (429, True), (400, False), (401, False)])
def test_bad_status_and_retry_count(calm, status, retried):
    m, v = calm
    with MockGateway(status=status) as gw:
        cfg = GatewayConfig(gw.endpoint, max_retries=2, backoff_base_ms=10)
        with pytest.raises(BadStatus) as ei:
            request_feedback(build_payload(m, v), cfg)
    assert ei.value.code == status
    assert len(gw.requests) == (3 if retried else 1)


# -- template and fallback -------------------------------------------------


def test_template_words():
    m = metrics()
    rep = template_feedback(m, classify(m))
    # heart-rate margin (1.5-0.2)/0.2 = 6.5 beats noise margin (0.9-0.4)/0.9
    assert rep.prompt_words == ("calm", "steady", "present")
    m2 = metrics(hr=-0.21, stab=0.1)
    assert template_feedback(m2, classify(m2)).prompt_words == ("calm", "present", "steady")
    n = metrics(hr=0.0)
    assert template_feedback(n, classify(n)).prompt_words == ("settling", "continuing")
    a = metrics(hr=2.0, rr=0.5, stab=2.0)
    assert template_feedback(a, classify(a)).prompt_words == ("restless", "take a breath")
    assert template_feedback(m, classify(m)) == template_feedback(m, classify(m))
    assert rep.source == "template" and len(rep.narrative) <= 600


def test_template_with_missing_channel():
    m = metrics()
    chans = dict(m.channels)
    chans["heart_rate"] = ChannelMetrics(missing_fraction=1.0)
    m = SessionMetrics(m.session_id, 600.0, chans)
    v = classify(m)
    rep = template_feedback(m, v)
    assert rep.prompt_words == ("settling", "continuing")
    assert "n/a" in rep.narrative


@given(hr=st.floats(-10, 10), rr=st.floats(-5, 5), stab=st.floats(0, 10))
def test_fallback_never_fails(hr, rr, stab):
    m = metrics(hr=hr, rr=rr, stab=stab)
    rep = generate_report(m, classify(m), None, None)
    assert rep.source == "template"
    assert 1 <= len(rep.prompt_words) <= 5


def test_generate_report_falls_back_when_unreachable(calm):
    m, v = calm
    cfg = GatewayConfig(f"http://127.0.0.1:{free_port()}", max_retries=1, backoff_base_ms=10)
    rep = generate_report(m, v, build_payload(m, v), cfg)
    assert rep.source == "template"


def test_secret_never_leaks(calm, monkeypatch, caplog):
    monkeypatch.setenv("EMOTIONCARRIER_API_KEY", SECRET)
    caplog.set_level(logging.DEBUG)
    m, v = calm
    payload = build_payload(m, v)
    with MockGateway() as gw:
        good = generate_report(m, v, payload, GatewayConfig(gw.endpoint))
    with MockGateway(status=500) as gw:
        bad = generate_report(m, v, payload, GatewayConfig(gw.endpoint, backoff_base_ms=1))
    blobs = [payload.text, json.dumps(good.to_dict()), json.dumps(bad.to_dict()), caplog.text,
             json.dumps(gw.requests[0]["body"])]
    assert all(SECRET not in b for b in blobs)
    assert bad.source == "template"
