import json
import math
import threading
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from toolgraph import (DependencyEdge, EmbeddingMatrix, Parameter, Query, ToolCorpus, ToolDoc,
                       build_graph)


class StubEmbedder:
    """Maps known texts to fixed vectors; unknown texts hash to a vector."""

    def __init__(self, table=None, dim=4):
        self.table = dict(table or {})
        self.dim = dim
        self.calls = []

    def vector(self, text):
        if text in self.table:
            return list(map(float, self.table[text]))
        rng = np.random.default_rng(zlib.crc32(text.encode()))
        return rng.normal(size=self.dim).tolist()

    def embed(self, texts):
        self.calls.append(list(texts))
        return [self.vector(t) for t in texts]


class StubClassifier:
    """Answers from a table keyed by (a_id, b_id); anything else is 'none'."""

    def __init__(self, table=None):
        self.table = dict(table or {})
        self.calls = []
        self._lock = threading.Lock()

    def classify(self, tool_a, tool_b):
        with self._lock:
            self.calls.append((tool_a["id"], tool_b["id"]))
        key = (tool_a["id"], tool_b["id"])
        if key in self.table:
            return self.table[key]
        rkey = (tool_b["id"], tool_a["id"])
        if rkey in self.table:
            label, conf = self.table[rkey]
            swap = {"a_depends_on_b": "b_depends_on_a", "b_depends_on_a": "a_depends_on_b"}
            return swap.get(label, label), conf
        return "none", 0.99


FIGURE1 = [
    ToolDoc("Validate", "Validate", "Validate credential",
            parameters=(Parameter("username", "str", "user name"), Parameter("password", "str", "secret"))),
    ToolDoc("Login", "Login", "Login account", parameters=(Parameter("token", "str", "validation token"),)),
    ToolDoc("UpdateInfo", "UpdateInfo", "Update user information such as email",
            parameters=(Parameter("email", "str", "new email"),)),
]


@pytest.fixture
def figure1_corpus():
    return ToolCorpus(FIGURE1)


@pytest.fixture
def figure1_graph(figure1_corpus):
    return build_graph(figure1_corpus, [DependencyEdge("Login", "Validate"),
                                        DependencyEdge("UpdateInfo", "Login")])


def _unit(c0, axis, d=6):
    v = [0.0] * d
    v[0] = c0
    v[axis] = math.sqrt(1 - c0 * c0)
    return v


SIX_IDS = ["UpdateInfo", "Login", "Validate", "SendEmail", "GetWeather", "ListFiles"]
SIX_VECTORS = [_unit(1.0, 1), _unit(0.3, 1), _unit(0.3, 2), _unit(0.38, 3), _unit(0.36, 4), _unit(0.1, 5)]
SIX_DESCRIPTIONS = ["Update user information such as email", "Login account", "Validate credential",
                    "Send an email message", "Get the weather forecast", "List files in a folder"]
FIGURE1_QUERY = "Update my email to new@domain.com"


@pytest.fixture
def six_tool_fixture():
    """Six tools; the query is cosine-close only to UpdateInfo.

    Returns (corpus, graph, raw embeddings, queries, embedder).
    """
    corpus = ToolCorpus(ToolDoc(i, i, d, category="account" if k < 3 else "misc")
                        for k, (i, d) in enumerate(zip(SIX_IDS, SIX_DESCRIPTIONS)))
    graph = build_graph(corpus, [DependencyEdge("UpdateInfo", "Login"), DependencyEdge("Login", "Validate")])
    x = EmbeddingMatrix(np.array(SIX_VECTORS), tuple(SIX_IDS))
    table = {FIGURE1_QUERY: [1.0, 0, 0, 0, 0, 0]}
    table.update({d: v for d, v in zip(SIX_DESCRIPTIONS, SIX_VECTORS)})
    queries = [Query("q1", FIGURE1_QUERY, {"UpdateInfo", "Login", "Validate"})]
    return corpus, graph, x, queries, StubEmbedder(table, dim=6)


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        server = self.server
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        with server.lock:
            server.requests.append((self.path, body))
        if self.path == "/v1/embed":
            out = {"embeddings": server.embedder.embed(body["texts"])}
        elif self.path == "/v1/classify_dependency":
            label, conf = server.classifier.classify(body["tool_a"], body["tool_b"])
            out = {"label": label, "confidence": conf}
        else:
            self.send_response(404)
            self.end_headers()
            return
        payload = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def stub_server():
    """Real HTTP server speaking the embedder and classifier wire formats.

    Set ``server.embedder`` / ``server.classifier`` to stubs before use.
    """
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.lock = threading.Lock()
    server.requests = []
    server.embedder = StubEmbedder()
    server.classifier = StubClassifier()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
