"""On-disk index directory shared by the CLI commands.

Layout::

    corpus.jsonl                 validated tool corpus
    edges.jsonl                  dependency edges (optional)
    embeddings.bin               raw tool embeddings (optional)
    embeddings_propagated.bin    propagated embeddings (optional)
    meta.json                    format version, settings, sha256 digests

Every file is written to a temporary name and renamed into place; meta.json
is always written last, so it never names a digest for a half-written file.
"""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
import tempfile
from pathlib import Path

from .corpus import RenderMode, ToolCorpus, load_corpus, save_corpus
from .depgraph import DependencyGraph, build_graph, load_edges, save_edges
from .encode import EmbeddingMatrix, load_embeddings, write_embeddings
from .errors import ValidationError

INDEX_FORMAT_VERSION = 1

CORPUS = "corpus.jsonl"
EDGES = "edges.jsonl"
EMBEDDINGS = "embeddings.bin"
PROPAGATED = "embeddings_propagated.bin"
META = "meta.json"
LOCK = ".lock"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def atomic_path(path: Path):
    """Yield a temporary path next to ``path``; rename over it on success."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


class IndexDirectory:
    def __init__(self, path):
        self.path = Path(path)
        self.meta: dict = {}

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, path) -> "IndexDirectory":
        idx = cls(path)
        idx.path.mkdir(parents=True, exist_ok=True)
        idx.meta = {"format_version": INDEX_FORMAT_VERSION, "files": {},
                    "render_mode": RenderMode.DESCRIPTION_ONLY.value}
        return idx

    @classmethod
    def open(cls, path) -> "IndexDirectory":
        idx = cls(path)
        meta_path = idx.path / META
        if not meta_path.is_file():
            raise ValidationError(f"{idx.path} is not an index directory (no {META})")
        with open(meta_path, encoding="utf-8") as f:
            idx.meta = json.load(f)
        if idx.meta.get("format_version") != INDEX_FORMAT_VERSION:
            raise ValidationError(f"unsupported index format version {idx.meta.get('format_version')!r}")
        idx.verify()
        return idx

    @contextlib.contextmanager
    def lock(self):
        self.path.mkdir(parents=True, exist_ok=True)
        with open(self.path / LOCK, "w") as f:
            try:
                fcntl.flock(f, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise ValidationError(f"{self.path} is locked by another process") from None
            try:
                yield self
            finally:
                fcntl.flock(f, fcntl.LOCK_UN)

    def verify(self) -> None:
        for name, digest in self.meta.get("files", {}).items():
            p = self.path / name
            if not p.is_file():
                raise ValidationError(f"{p} is listed in {META} but missing")
            if sha256_file(p) != digest:
                raise ValidationError(f"{p} does not match its digest in {META}")

    def has(self, name: str) -> bool:
        return name in self.meta.get("files", {})

    def digest(self, name: str) -> str | None:
        return self.meta.get("files", {}).get(name)

    def _write(self, name: str, writer) -> None:
        target = self.path / name
        with atomic_path(target) as tmp:
            writer(tmp)
        self.meta["files"][name] = sha256_file(target)

    def _drop(self, name: str) -> None:
        self.meta["files"].pop(name, None)
        with contextlib.suppress(FileNotFoundError):
            (self.path / name).unlink()

    def save_meta(self) -> None:
        target = self.path / META
        with atomic_path(target) as tmp:
            tmp.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # -- contents ------------------------------------------------------------

    def corpus(self) -> ToolCorpus:
        return load_corpus(self.path / CORPUS)

    def write_corpus(self, corpus: ToolCorpus) -> None:
        # a new corpus invalidates everything derived from the old one
        for name in (EDGES, EMBEDDINGS, PROPAGATED):
            self._drop(name)
        self.meta.pop("propagation", None)
        self._write(CORPUS, lambda p: save_corpus(corpus, p))

    def graph(self, corpus: ToolCorpus | None = None) -> DependencyGraph:
        corpus = corpus or self.corpus()
        if not self.has(EDGES):
            raise ValidationError(f"{self.path} has no dependency edges; run 'deps' first")
        return build_graph(corpus, load_edges(self.path / EDGES))

    def write_graph(self, graph: DependencyGraph) -> None:
        self._drop(PROPAGATED)
        self.meta.pop("propagation", None)
        self._write(EDGES, lambda p: save_edges(graph, p))

    def embeddings(self, propagated: bool = False, corpus: ToolCorpus | None = None) -> EmbeddingMatrix:
        corpus = corpus or self.corpus()
        name = PROPAGATED if propagated else EMBEDDINGS
        if not self.has(name):
            hint = "run 'propagate' first" if propagated else "run 'embed' first"
            raise ValidationError(f"{self.path} has no {name}; {hint}")
        if propagated:
            src = self.meta.get("propagation", {}).get("sources", {})
            if src != {EDGES: self.digest(EDGES), EMBEDDINGS: self.digest(EMBEDDINGS)}:
                raise ValidationError(f"{PROPAGATED} is stale; re-run 'propagate'")
        return load_embeddings(self.path / name, corpus)

    def write_embeddings(self, matrix: EmbeddingMatrix, render_mode: str | None) -> None:
        self._drop(PROPAGATED)
        self.meta.pop("propagation", None)
        self._write(EMBEDDINGS, lambda p: write_embeddings(matrix, p))
        self.meta["render_mode"] = render_mode

    def write_propagated(self, matrix: EmbeddingMatrix, direction: str, rounds: int) -> None:
        self._write(PROPAGATED, lambda p: write_embeddings(matrix, p))
        self.meta["propagation"] = {
            "direction": direction, "rounds": rounds,
            "sources": {EDGES: self.digest(EDGES), EMBEDDINGS: self.digest(EMBEDDINGS)},
        }
