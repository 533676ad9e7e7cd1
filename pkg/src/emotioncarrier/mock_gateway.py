"""In-process chat-completions server for tests and offline demos."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

DEFAULT_REPLY = json.dumps({
    "prompt_words": ["calm", "steady"],
    "narrative": "Your breathing slowed as the brush found its rhythm.",
})


class MockGateway:
    """Answers POST /v1/chat/completions with a canned reply.

    ``reply`` is the assistant message text; ``status`` other than 200 sends
    an error body instead; ``delay_s`` stalls each response. Every request
    (headers and parsed body) is kept in ``requests``.
    """

    def __init__(self, reply: str = DEFAULT_REPLY, status: int = 200, delay_s: float = 0.0,
                 host: str = "127.0.0.1", port: int = 0):
        self.reply = reply
        self.status = status
        self.delay_s = delay_s
        self.requests: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except json.JSONDecodeError:
                    body = None
                with mock._lock:
                    mock.requests.append({"path": self.path, "headers": dict(self.headers), "body": body})
                if mock.delay_s:
                    time.sleep(mock.delay_s)
                if self.path != "/v1/chat/completions":
                    self._send(404, {"error": {"message": "not found"}})
                elif mock.status != 200:
                    self._send(mock.status, {"error": {"message": "mock failure"}})
                else:
                    self._send(200, {
                        "id": f"chatcmpl-mock-{len(mock.requests)}",
                        "object": "chat.completion",
                        "model": (body or {}).get("model", "mock"),
                        "choices": [{
                            "index": 0,
                            "message": {"role": "assistant", "content": mock.reply},
                            "finish_reason": "stop",
                        }],
                    })

            def _send(self, code: int, obj: dict[str, Any]) -> None:
                data = json.dumps(obj).encode()
                try:
                    self.send_response(code)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> MockGateway:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> MockGateway:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
