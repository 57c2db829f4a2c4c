"""Local HTTP server replaying canned chat-completions exchanges.

Fixtures are keyed by :func:`groundkit.backend.http.request_hash` of the request
body. On disk a fixture directory holds one ``<hash>.json`` per exchange::

    {"status": 200, "body": {...}, "delay": 0.0}

``delay`` (seconds) lets tests provoke client timeouts. Unknown requests get 404.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

from .http import request_hash


def load_fixture_dir(path: str | Path) -> dict[str, dict]:
    return {f.stem: json.loads(f.read_text()) for f in sorted(Path(path).glob("*.json"))}


def write_fixture(path: str | Path, request_body: dict, status: int = 200, body=None, delay: float = 0.0) -> str:
    key = request_hash(request_body)
    Path(path).mkdir(parents=True, exist_ok=True)
    (Path(path) / f"{key}.json").write_text(
        json.dumps({"status": status, "body": body, "delay": delay}, sort_keys=True)
    )
    return key


class FixtureServer:
    """Threaded fixture server; use as a context manager.

    Tracks the peak number of simultaneously in-flight requests and the number of
    hits per fixture so tests can assert concurrency bounds and retry counts.
    """

    def __init__(self, fixtures: Mapping[str, dict] | str | Path, host: str = "127.0.0.1"):
        if isinstance(fixtures, (str, Path)):
            fixtures = load_fixture_dir(fixtures)
        self.fixtures = dict(fixtures)
        self.hits: dict[str, int] = {}
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with server._lock:
                    server.in_flight += 1
                    server.peak_in_flight = max(server.peak_in_flight, server.in_flight)
                try:
                    self._reply(raw)
                finally:
                    with server._lock:
                        server.in_flight -= 1

            def _reply(self, raw: bytes):
                try:
                    key = request_hash(json.loads(raw))
                except ValueError:
                    return self._send(400, {"error": "request body is not JSON"})
                with server._lock:
                    server.hits[key] = server.hits.get(key, 0) + 1
                fixture = server.fixtures.get(key)
                if fixture is None:
                    return self._send(404, {"error": f"no fixture for {key}"})
                if fixture.get("delay"):
                    time.sleep(float(fixture["delay"]))
                body = fixture.get("body")
                self._send(int(fixture.get("status", 200)), body, raw_text=fixture.get("raw"))

            def _send(self, status: int, body, raw_text: str | None = None):
                data = (raw_text if raw_text is not None else json.dumps(body)).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout tests)

        self._httpd = ThreadingHTTPServer((host, 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "FixtureServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "FixtureServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
