"""Dense top-k retrieval over tool embeddings."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .encode import EmbeddingMatrix, check_alignment, embed_texts
from .errors import ValidationError


class SimilarityMethod(str, enum.Enum):
    """Higher is better for every method; distances are negated."""

    COSINE = "cosine"
    DOT = "dot"
    NEG_L1 = "neg_l1"
    NEG_L2 = "neg_l2"


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]
    k: int

    @property
    def ids(self) -> list[str]:
        return [tid for tid, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def top(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k], k)

    def to_json(self) -> dict:
        return {"k": self.k, "results": [{"id": tid, "score": s} for tid, s in self.entries]}

    def __len__(self):
        return len(self.entries)


def similarity(q, t, method=SimilarityMethod.COSINE) -> float:
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if q.shape != t.shape or q.ndim != 1:
        raise ValidationError(f"dimension mismatch: {q.shape} vs {t.shape}")
    return float(score_matrix(q[None, :], t[None, :], method)[0, 0])


def score_matrix(queries: np.ndarray, tools: np.ndarray, method=SimilarityMethod.COSINE) -> np.ndarray:
    """``(n_queries, n_tools)`` similarity scores.

    Each query is scored on its own so a result never depends on which other
    queries shared the call.
    """
    method = SimilarityMethod(method)
    if queries.shape[1] != tools.shape[1]:
        raise ValidationError(
            f"query dimension {queries.shape[1]} does not match tool dimension {tools.shape[1]}")
    out = np.empty((queries.shape[0], tools.shape[0]))
    if method is SimilarityMethod.COSINE:
        tn = np.sqrt((tools * tools).sum(axis=1))
        if (tn == 0).any():
            raise ValidationError(f"zero tool vector at row {int(np.argmax(tn == 0))} under cosine similarity")
    for i, q in enumerate(queries):
        if method is SimilarityMethod.DOT:
            out[i] = tools @ q
        elif method is SimilarityMethod.COSINE:
            qn = np.sqrt(q @ q)
            if qn == 0:
                raise ValidationError("zero query vector under cosine similarity")
            out[i] = (tools @ q) / (qn * tn)
        else:
            diff = tools - q
            if method is SimilarityMethod.NEG_L1:
                out[i] = -np.abs(diff).sum(axis=1)
            else:
                out[i] = -np.sqrt((diff * diff).sum(axis=1))
    return out


def rank(scores: Sequence[float], ids: Sequence[str], k: int) -> RankedList:
    """Top-``k`` by descending score, ties broken by ascending tool id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return RankedList((), k)
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    order = np.lexsort((id_rank, -scores))[:k]
    return RankedList(tuple((ids[i], float(scores[i])) for i in order), k)


class DenseRetriever(BaseEstimator):
    """Brute-force top-k retrieval over a fixed tool matrix.

    ``fit`` takes the tool embeddings (raw or propagated). ``predict`` takes
    query strings and embeds them through ``embedder``; ``rank_vectors``
    skips the embedder. Query vectors are never propagated.

    Parameters
    ----------
    embedder : object with ``embed(texts) -> list[list[float]]``, optional
    similarity : {"cosine", "dot", "neg_l1", "neg_l2"}, default="cosine"
    k : int, default=10
    batch_size : int, default=32
        Query texts per embedder request.
    n_jobs : int, default=1
        Maximum in-flight embedder requests.
    """

    def __init__(self, embedder=None, similarity="cosine", k=10, batch_size=32, n_jobs=1):
        self.embedder = embedder
        self.similarity = similarity
        self.k = k
        self.batch_size = batch_size
        self.n_jobs = n_jobs

    def fit(self, X, y=None, ids=None):
        if isinstance(X, EmbeddingMatrix):
            ids = X.node_order if ids is None else ids
            X = X.values
        X = check_array(X, dtype=np.float64)
        if ids is None:
            ids = [str(i) for i in range(X.shape[0])]
        if len(ids) != X.shape[0]:
            raise ValidationError(f"{len(ids)} ids for {X.shape[0]} rows")
        self.method_ = SimilarityMethod(self.similarity)
        self.tool_matrix_ = X
        self.ids_ = list(ids)
        self.n_features_in_ = X.shape[1]
        return self

    def rank_vectors(self, Q, k=None) -> list[RankedList]:
        check_is_fitted(self, "tool_matrix_")
        k = self.k if k is None else k
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        scores = score_matrix(Q, self.tool_matrix_, self.method_)
        return [rank(row, self.ids_, k) for row in scores]

    def embed_queries(self, texts: Sequence[str]) -> np.ndarray:
        if self.embedder is None:
            raise ValueError("DenseRetriever.predict needs an embedder")
        return embed_texts(list(texts), self.embedder, self.batch_size, self.n_jobs)

    def predict(self, texts: Sequence[str], k=None) -> list[RankedList]:
        check_is_fitted(self, "tool_matrix_")
        texts = list(texts)
        if not texts:
            return []
        return self.rank_vectors(self.embed_queries(texts), k)


def retrieve(query_text: str, x: EmbeddingMatrix, client, k: int = 10,
             method=SimilarityMethod.COSINE, corpus=None) -> RankedList:
    if corpus is not None:
        check_alignment(x.node_order, corpus.ids)
    return DenseRetriever(client, similarity=method, k=k).fit(x).predict([query_text])[0]


def retrieve_batch(queries: Sequence[str], x: EmbeddingMatrix, client, k: int = 10,
                   method=SimilarityMethod.COSINE, batch_size: int = 32, n_jobs: int = 1,
                   corpus=None) -> list[RankedList]:
    """Like :func:`retrieve` per query, with embedder calls batched."""
    if corpus is not None:
        check_alignment(x.node_order, corpus.ids)
    retriever = DenseRetriever(client, similarity=method, k=k, batch_size=batch_size, n_jobs=n_jobs)
    return retriever.fit(x).predict(queries)
