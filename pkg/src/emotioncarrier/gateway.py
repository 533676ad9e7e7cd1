"""Feedback payloads, the chat-completions client, and the offline template fallback."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import httpx

from .analytics import CalmingVerdict, ClassifyThresholds, SessionMetrics

log = logging.getLogger(__name__)

MAX_PAYLOAD_BYTES = 32 * 1024
MAX_PROMPT_WORDS = 5
MAX_NARRATIVE_CHARS = 600
DEFAULT_API_KEY_ENV = "EMOTIONCARRIER_API_KEY"

INSTALLATION_MODEL = "EmotionCarrier writing table (HX711 load cell + CZN-15E microphone, Arduino Mega)"
WATCH_MODEL = "Apple Watch (simulated heart and respiratory rate)"

SYSTEM_PROMPT = (
    "You receive a JSON summary of one mindful calligraphy session: brush pressure, "
    "breath and movement noise, heart rate and respiratory rate trends, plus recent "
    "sessions for context. Reply with a JSON object only, of the form "
    '{"prompt_words": ["..."], "narrative": "..."}, where prompt_words holds 1 to 5 '
    "short, warm emotional prompt words and narrative is at most 600 characters of "
    "gentle, encouraging feedback grounded in the data."
)


class GatewayError(Exception):
    """Any failure that should send the caller to the template fallback."""


class GatewayUnreachable(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class BadStatus(GatewayError):
    def __init__(self, code: int, message: str = ""):
        super().__init__(f"HTTP {code} {message}".strip())
        self.code = code


class UnparseableReply(GatewayError):
    pass


class PayloadTooLarge(ValueError):
    pass


def round_sig(x: float | None, digits: int = 4) -> float | None:
    if x is None:
        return None
    return float(f"{x:.{digits}g}")


@dataclass(frozen=True)
class FeedbackPayload:
    session_id: str
    document: dict[str, Any]
    text: str

    @property
    def size(self) -> int:
        return len(self.text.encode("utf-8"))


def _rounded_metrics(metrics: SessionMetrics) -> dict[str, Any]:
    d = metrics.to_dict()
    chans = {}
    for name, cm in d["channels"].items():
        if cm["mean"] is None:
            chans[name] = None
        else:
            chans[name] = {k: round_sig(v) for k, v in cm.items()}
    return {"duration_s": round_sig(d["duration_s"]), "channels": chans}


def build_payload(metrics: SessionMetrics, verdict: CalmingVerdict,
                  cohort: Sequence[dict[str, Any]] = (),
                  device_info: dict[str, str] | None = None,
                  cohort_k: int | None = 10) -> FeedbackPayload:
    """Deterministic JSON document describing one session for the feedback model.

    ``cohort`` holds per-session summary rows (oldest first); the last
    ``cohort_k`` are included, or all of them when ``cohort_k`` is None.
    Numbers are rounded to 4 significant digits. Raises PayloadTooLarge above 32 KiB.
    """
    devices = {"installation": INSTALLATION_MODEL, "watch": WATCH_MODEL}
    if device_info:
        devices.update(device_info)
    recent = list(cohort) if cohort_k is None else list(cohort)[-cohort_k:] if cohort_k > 0 else []
    doc = {
        "session_id": metrics.session_id,
        "devices": {"installation": devices["installation"], "watch": devices["watch"]},
        "metrics": _rounded_metrics(metrics),
        "verdict": verdict.to_dict(),
        "cohort": [{k: (round_sig(v) if isinstance(v, float) else v) for k, v in row.items()} for row in recent],
    }
    text = json.dumps(doc, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    payload = FeedbackPayload(metrics.session_id, doc, text)
    if payload.size > MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload is {payload.size} bytes, limit {MAX_PAYLOAD_BYTES}")
    return payload


@dataclass(frozen=True)
class FeedbackReport:
    session_id: str
    prompt_words: tuple[str, ...]
    narrative: str
    source: str
    verdict: str

    def __post_init__(self) -> None:
        if not 1 <= len(self.prompt_words) <= MAX_PROMPT_WORDS:
            raise ValueError("prompt_words must hold 1 to 5 entries")
        if len(self.narrative) > MAX_NARRATIVE_CHARS:
            raise ValueError("narrative longer than 600 characters")
        if self.source not in ("llm", "template"):
            raise ValueError(f"unknown source {self.source!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "prompt_words": list(self.prompt_words),
            "narrative": self.narrative,
            "source": self.source,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str
    model: str = "gpt-4o-mini"
    timeout_ms: int = 15_000
    max_retries: int = 2
    api_key_env: str = DEFAULT_API_KEY_ENV
    backoff_base_ms: int = 250

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def backoff_schedule(self) -> list[float]:
        """Seconds slept before each retry."""
        return [self.backoff_base_ms / 1000.0 * 2**i for i in range(self.max_retries)]

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GatewayConfig:
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def extract_json_object(text: str) -> dict[str, Any]:
    """First balanced ``{...}`` in ``text`` that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise UnparseableReply("no JSON object in reply")


def parse_reply(session_id: str, verdict: str, content: str) -> FeedbackReport:
    obj = extract_json_object(content)
    words = obj.get("prompt_words")
    narrative = obj.get("narrative")
    if not isinstance(words, list) or not all(isinstance(w, str) and w.strip() for w in words):
        raise UnparseableReply("prompt_words missing or not a list of strings")
    if not isinstance(narrative, str):
        raise UnparseableReply("narrative missing")
    try:
        return FeedbackReport(session_id, tuple(w.strip() for w in words), narrative, "llm", verdict)
    except ValueError as exc:
        raise UnparseableReply(str(exc)) from None


def _retryable(exc: GatewayError) -> bool:
    if isinstance(exc, BadStatus):
        return exc.code == 429 or exc.code >= 500
    return isinstance(exc, (GatewayUnreachable, GatewayTimeout))


def request_feedback(payload: FeedbackPayload, cfg: GatewayConfig, verdict: str = "neutral",
                     client: httpx.Client | None = None) -> FeedbackReport:
    """POST the payload to ``{endpoint}/v1/chat/completions`` and parse the reply.

    Connection failures, timeouts and 429/5xx responses are retried up to
    ``max_retries`` times with exponential backoff.
    """
    url = cfg.endpoint.rstrip("/") + "/v1/chat/completions"
    key = os.environ.get(cfg.api_key_env, "")
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = {
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": payload.text},
        ],
    }
    timeout = httpx.Timeout(cfg.timeout_ms / 1000.0)
    own = client is None
    http = client or httpx.Client(timeout=timeout, trust_env=False)
    backoff = cfg.backoff_schedule()
    try:
        for attempt in range(cfg.max_retries + 1):
            try:
                return _attempt(http, url, headers, body, timeout, payload.session_id, verdict)
            except GatewayError as exc:
                log.warning("feedback request attempt %d failed: %s", attempt + 1, type(exc).__name__)
                if attempt == cfg.max_retries or not _retryable(exc):
                    raise
                time.sleep(backoff[attempt])
    finally:
        if own:
            http.close()
    raise AssertionError("unreachable")


def _attempt(http: httpx.Client, url: str, headers: dict[str, str], body: dict[str, Any],
             timeout: httpx.Timeout, session_id: str, verdict: str) -> FeedbackReport:
    try:
        resp = http.post(url, headers=headers, json=body, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise GatewayTimeout(type(exc).__name__) from None
    except (httpx.ConnectError, httpx.NetworkError, httpx.RemoteProtocolError) as exc:
        raise GatewayUnreachable(type(exc).__name__) from None
    if resp.status_code != 200:
        raise BadStatus(resp.status_code, resp.reason_phrase)
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise UnparseableReply("response is not a chat completion") from None
    if not isinstance(content, str):
        raise UnparseableReply("message content is not text")
    return parse_reply(session_id, verdict, content)


_WORDS = {
    "neutral": ("settling", "continuing"),
    "agitated": ("restless", "take a breath"),
}


def template_feedback(metrics: SessionMetrics, verdict: CalmingVerdict,
                      thresholds: ClassifyThresholds | None = None) -> FeedbackReport:
    """Offline report built from fixed word tables and a sentence template.

    A calming session leads with "calm"; "steady" and "present" follow in
    order of how far the heart-rate and noise rules cleared their thresholds.
    """
    th = thresholds or ClassifyThresholds()
    hr = metrics.scalar("heart_rate.slope_per_min")
    rr = metrics.scalar("respiratory_rate.slope_per_min")
    stab = metrics.scalar("audio_rms.stabilization_index")
    if verdict.verdict == "calming":
        margins = {
            "steady": (-hr - th.hr_slope_min) / th.hr_slope_min,
            "present": (th.stab_max - stab) / th.stab_max,
        }
        words = ("calm",) + tuple(sorted(margins, key=lambda w: (-margins[w], w)))
    else:
        words = _WORDS[verdict.verdict]

    def fmt(v: float | None, unit: str) -> str:
        return "n/a" if v is None else f"{v:+.2f} {unit}"

    minutes = metrics.duration_s / 60.0
    narrative = (
        f"Over {minutes:.1f} minutes of writing your heart rate changed {fmt(hr, 'bpm/min')} "
        f"and your breathing {fmt(rr, 'breaths/min per min')}. "
        f"Breath and movement noise ended at "
        f"{'n/a' if stab is None else f'{stab:.2f}'} times its early variability. "
        f"Session read as {verdict.verdict}."
    )
    return FeedbackReport(metrics.session_id, words, narrative[:MAX_NARRATIVE_CHARS], "template", verdict.verdict)


def generate_report(metrics: SessionMetrics, verdict: CalmingVerdict, payload: FeedbackPayload | None,
                    cfg: GatewayConfig | None) -> FeedbackReport:
    """Gateway report when configured and reachable, otherwise the template."""
    if cfg is not None and payload is not None:
        try:
            return request_feedback(payload, cfg, verdict.verdict)
        except GatewayError as exc:
            log.warning("gateway failed (%s); using template feedback", type(exc).__name__)
    return template_feedback(metrics, verdict)
