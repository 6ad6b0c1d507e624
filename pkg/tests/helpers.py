"""Shared test utilities: reported-score fixtures, a stub HTTP server, golden serialization."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from selfdocs.core import TASK_ORDER
from selfdocs.evaluation import ResultTable

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
REPORTED = FIXTURES / "reported"
GOLDEN = TESTS / "golden"
E2E = FIXTURES / "e2e"

LABEL_TO_TASK = {t.label: t for t in TASK_ORDER}


def load_reported(name: str) -> dict:
    return json.loads((REPORTED / name).read_text(encoding="utf-8"))


def reported_table(name: str, rows=None, *, with_averages: bool = True, rename=None) -> ResultTable:
    """Build a ResultTable from a reported-score fixture (printed averages kept by default)."""
    table = ResultTable()
    for row, entry in load_reported(name).items():
        if rows is not None and row not in rows:
            continue
        label = rename(row) if rename else row
        for col, v in entry["values"].items():
            if col == "Average":
                if with_averages:
                    table.averages[label] = v
            else:
                table.set(label, LABEL_TO_TASK[col], v)
    return table


def serialize_prompt(prompt) -> str:
    out = f"[system]\n{prompt.system}\n" if prompt.system is not None else ""
    return out + f"[user]\n{prompt.user}\n"


class StubServer:
    """Threaded local HTTP server that records raw request bodies.

    ``responder(path, body_bytes) -> (status, dict)`` decides each reply.
    """

    def __init__(self, responder):
        self.requests: list[tuple[str, dict[str, str], bytes]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(n)
                outer.requests.append((self.path, dict(self.headers), raw))
                status, payload = responder(self.path, raw)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.01}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def chat_reply(content):
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


def embed_reply(vectors):
    return {"data": [{"index": i, "embedding": v} for i, v in enumerate(vectors)]}
