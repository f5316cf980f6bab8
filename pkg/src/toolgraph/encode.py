"""Tool embedding matrices and parameter-free graph propagation."""

from __future__ import annotations

import enum
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import RenderMode, ToolCorpus, render_document
from .depgraph import DependencyGraph
from .errors import RemoteError, ValidationError

MAGIC = b"TGRE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class PropagationDirection(str, enum.Enum):
    """Orientation of the adjacency fed to the propagation operator.

    ``forward``: row ``i`` mixes in the tools ``i`` depends on.
    ``reverse``: row ``i`` mixes in the tools that depend on ``i``.
    ``symmetric``: both.
    """

    FORWARD = "forward"
    REVERSE = "reverse"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-per-tool embeddings aligned with a corpus.

    ``values`` is float64 in memory; files store float32.
    ``provenance`` is ``"raw"`` or ``"propagated(<rounds>,<direction>)"``.
    """

    values: np.ndarray
    node_order: tuple[str, ...]
    provenance: str = "raw"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValidationError(f"embedding matrix must be 2-D with d >= 1, got shape {values.shape}")
        if values.shape[0] != len(self.node_order):
            raise ValidationError(f"{values.shape[0]} rows for {len(self.node_order)} tool ids")
        if not np.isfinite(values).all():
            raise ValidationError("embedding matrix contains NaN or Inf")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_order", tuple(self.node_order))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingMatrix) and self.node_order == other.node_order
                and np.array_equal(self.values, other.values))


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    n, d = matrix.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, d))
        f.write(np.ascontiguousarray(matrix.values, dtype="<f4").tobytes())
        for tid in matrix.node_order:
            raw = tid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValidationError(f"tool id too long for the embedding file: {tid[:40]!r}...")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)


def load_embeddings(path, corpus: ToolCorpus | None = None) -> EmbeddingMatrix:
    """Read an embedding file; with ``corpus`` the id order must match it exactly."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    nbytes = 4 * n * d
    if len(data) < offset + nbytes:
        raise ValidationError(f"{path}: truncated matrix")
    values = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += nbytes
    ids = []
    for _ in range(n):
        if len(data) < offset + 2:
            raise ValidationError(f"{path}: truncated id table")
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        ids.append(data[offset:offset + length].decode("utf-8"))
        offset += length
    if offset != len(data):
        raise ValidationError(f"{path}: {len(data) - offset} trailing bytes")
    if not np.isfinite(values).all():
        raise ValidationError(f"{path}: NaN or Inf entries")
    if corpus is not None:
        check_alignment(ids, corpus.ids)
    return EmbeddingMatrix(values.astype(np.float64), tuple(ids))


def check_alignment(ids: Sequence[str], expected: Sequence[str]) -> None:
    if list(ids) == list(expected):
        return
    missing = [t for t in expected if t not in set(ids)]
    unexpected = [t for t in ids if t not in set(expected)]
    if missing:
        raise ValidationError(f"embeddings lack tool id {missing[0]!r}" +
                              (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    if unexpected:
        raise ValidationError(f"embeddings contain unknown tool id {unexpected[0]!r}")
    raise ValidationError("embedding rows are not in corpus order")


def _batches(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def embed_texts(texts: Sequence[str], client, batch_size: int = 32, max_workers: int = 1) -> np.ndarray:
    """Embed ``texts`` in order-preserving batches; returns an ``(n, d)`` array."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    batches = _batches(list(texts), batch_size)

    def run(b):
        try:
            return client.embed(batches[b])
        except RemoteError as exc:
            start = b * batch_size
            raise RemoteError(f"embedding texts {start}..{start + len(batches[b]) - 1}: {exc}") from exc

    if max_workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, range(len(batches))))
    else:
        results = [run(b) for b in range(len(batches))]
    rows = []
    for batch, vectors in zip(batches, results):
        if len(vectors) != len(batch):
            raise RemoteError(f"embedder returned {len(vectors)} vectors for {len(batch)} texts")
        rows.extend(vectors)
    if not rows:
        return np.zeros((0, 0))
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise RemoteError(f"embedder returned inconsistent dimensions {sorted(dims)}")
    try:
        out = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise RemoteError("embedder returned non-numeric vectors") from None
    if not np.isfinite(out).all():
        raise RemoteError("embedder returned NaN or Inf")
    return out


def embed_corpus(corpus: ToolCorpus, client, mode: RenderMode | str = RenderMode.DESCRIPTION_ONLY,
                 batch_size: int = 32, max_workers: int = 1) -> EmbeddingMatrix:
    texts = [render_document(t, mode) for t in corpus]
    return EmbeddingMatrix(embed_texts(texts, client, batch_size, max_workers), tuple(corpus.ids))


def oriented_adjacency(graph: DependencyGraph, direction) -> sparse.csr_matrix:
    direction = PropagationDirection(direction)
    a = graph.adjacency()
    if direction is PropagationDirection.REVERSE:
        a = a.T
    elif direction is PropagationDirection.SYMMETRIC:
        a = a + a.T
        a.data[:] = 1.0
    return sparse.csr_matrix(a)


def propagation_operator(graph: DependencyGraph, direction=PropagationDirection.REVERSE):
    """Return ``(A_hat, d_inv_sqrt)`` with the operator ``diag(d) @ A_hat @ diag(d)``.

    ``A_hat`` is the oriented adjacency plus self-loops; degrees are its row sums.
    """
    n = graph.n_nodes
    a_hat = oriented_adjacency(graph, direction) + sparse.identity(n, format="csr")
    a_hat = sparse.csr_matrix(a_hat)
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    return a_hat, 1.0 / np.sqrt(deg)


def _apply(a_hat, d_inv_sqrt, x, rounds):
    for _ in range(rounds):
        x = d_inv_sqrt[:, None] * (a_hat @ (d_inv_sqrt[:, None] * x))
    return x


def propagate(x: EmbeddingMatrix, graph: DependencyGraph,
              direction=PropagationDirection.REVERSE, rounds: int = 1) -> EmbeddingMatrix:
    """Apply ``D^-1/2 (A + I) D^-1/2`` to ``x`` ``rounds`` times."""
    direction = PropagationDirection(direction)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if tuple(x.node_order) != tuple(graph.node_order):
        raise ValidationError("embedding rows and graph nodes are not aligned")
    a_hat, d = propagation_operator(graph, direction)
    out = _apply(a_hat, d, np.asarray(x.values, dtype=np.float64), rounds)
    return EmbeddingMatrix(out, x.node_order, f"propagated({rounds},{direction.value})")


class GraphPropagator(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`propagate`.

    ``fit`` builds the normalized operator from ``graph``; ``transform``
    applies it to an ``(n_tools, d)`` array or :class:`EmbeddingMatrix`
    whose rows follow ``graph.node_order``. Plain arrays come back as arrays.

    Parameters
    ----------
    graph : DependencyGraph
    direction : {"reverse", "forward", "symmetric"}, default="reverse"
    rounds : int, default=1
    """

    def __init__(self, graph=None, direction="reverse", rounds=1):
        self.graph = graph
        self.direction = direction
        self.rounds = rounds

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValueError("GraphPropagator needs a dependency graph")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ValueError(f"rounds must be a positive integer, got {self.rounds!r}")
        self.direction_ = PropagationDirection(self.direction)
        self.a_hat_, self.d_inv_sqrt_ = propagation_operator(self.graph, self.direction_)
        self.n_features_in_ = None if X is None else _as_values(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "a_hat_")
        if isinstance(X, EmbeddingMatrix):
            return propagate(X, self.graph, self.direction_, int(self.rounds))
        values = check_array(X, dtype=np.float64)
        if values.shape[0] != self.graph.n_nodes:
            raise ValidationError(f"{values.shape[0]} rows for a graph of {self.graph.n_nodes} nodes")
        return _apply(self.a_hat_, self.d_inv_sqrt_, values, int(self.rounds))


def _as_values(X) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        return X.values
    return check_array(X, dtype=np.float64)
