import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

FIG_POOL = {
    "pool": [
        {"id": "fact:Zero Dark Thirty|written_by|Mark Boal", "text": "Zero Dark Thirty written_by Mark Boal", "score": 0.91},
        {"id": "fact:Zero Dark Thirty|has_genre|War film", "text": "Zero Dark Thirty has_genre War film", "score": 0.42},
        {"id": "fact:Zero Dark Thirty|directed_by|Kathryn Bigelow", "text": "Zero Dark Thirty directed_by Kathryn Bigelow", "score": 0.17},
    ],
    "pool_size": 2,
    "candidates": 3,
    "halt_node": "ent:Zero Dark Thirty",
    "variance": 0.18,
    "trace": [{"node": "ent:Zero Dark Thirty", "chosen": "ent:Zero Dark Thirty", "logp": -0.2}],
}


class MockService:
    """Canned selection service: replays fixtures and records requests."""

    def __init__(self):
        self.requests: list[tuple[str, dict]] = []
        self.fail_next = 0  # respond 500 to this many requests first
        self.select_response = FIG_POOL
        self.render_template = (
            "PROMPT[mode={mode}]\nHISTORY:{history}\nPOOL:{pool}\n"
        )

        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                if self.path == "/healthz":
                    self._reply(200, {"status": "ok", "graph_nodes": 6})
                else:
                    self._reply(404, {"error": "nope"})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"{}")
                mock.requests.append((self.path, body))
                if mock.fail_next > 0:
                    mock.fail_next -= 1
                    self._reply(500, {"error": "transient"})
                    return
                if self.path == "/select":
                    if not str(body.get("utterance", "")).strip():
                        self._reply(400, {"error": "field 'utterance' must be a non-empty string"})
                        return
                    if "reject-me" in body.get("utterance", ""):
                        self._reply(400, {"error": "server-side rejection marker"})
                        return
                    self._reply(200, mock.select_response)
                elif self.path == "/render":
                    if body.get("mode") == "with_knowledge" and not body.get("pool"):
                        self._reply(422, {"error": "with_knowledge mode requires a non-empty knowledge pool"})
                        return
                    prompt = mock.render_template.format(
                        mode=body.get("mode"),
                        history="|".join(body.get("history", [])),
                        pool="|".join(body.get("pool", [])),
                    )
                    self._reply(200, {"prompt": prompt})
                else:
                    self._reply(404, {"error": "nope"})

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}"

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_service():
    service = MockService().start()
    yield service
    service.stop()
