import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from dear import CorpusIndex, Document, Query


TOY_DOCS = [
    Document("d1", "the quick brown fox jumps over the lazy dog"),
    Document("d2", "a quick brown dog outpaces a lazy fox"),
    Document("d3", "information retrieval with sparse term matching"),
    Document("d4", "the fox of the north is quick and brown and quick"),
    Document("d5", "dense vector retrieval and neural reranking methods"),
]


@pytest.fixture
def toy_docs():
    return list(TOY_DOCS)


@pytest.fixture
def toy_index():
    return CorpusIndex.build(TOY_DOCS)


@pytest.fixture
def toy_query():
    return Query(query_id="q1", text="quick brown fox")


class _MockHandler(BaseHTTPRequestHandler):
    """Scripted HTTP responder; the server instance carries the script."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(
            {"path": self.path, "body": body,
             "headers": {k.lower(): v for k, v in self.headers.items()}})
        if self.server.responses:
            status, payload = self.server.responses.pop(0)
        else:
            status, payload = self.server.default_response
        raw = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


class MockHttpServer:
    """In-process HTTP server for exercising the real client code paths.

    Queue (status, payload) pairs on .responses; once drained, requests get
    .default_response. Every request lands in .requests.
    """

    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _MockHandler)
        self.server.requests = []
        self.server.responses = []
        self.server.default_response = (200, {})
        self.thread = threading.Thread(
            target=lambda: self.server.serve_forever(poll_interval=0.01),
            daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.server.requests

    @property
    def responses(self):
        return self.server.responses

    def set_default(self, status, payload):
        self.server.default_response = (status, payload)

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def http_server():
    server = MockHttpServer()
    yield server
    server.close()
