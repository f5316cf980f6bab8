"""Word-frequency baselines: Okapi BM25 and TF-IDF cosine.

Both share one index of raw term statistics built over rendered tool
documents. There is no stemming and no stop-word list.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import RenderMode, ToolCorpus, render_document
from .retrieve import RankedList, rank

BM25_K1 = 1.2
BM25_B = 0.75

_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return [t for t in _SPLIT.split(text.lower()) if t]


@dataclass(frozen=True)
class LexicalIndex:
    vocabulary: dict[str, int]
    doc_term_freqs: tuple[Counter, ...]
    doc_freqs: dict[str, int]
    doc_lengths: tuple[int, ...]
    avg_doc_length: float
    n_docs: int


def index_documents(docs: Sequence[str]) -> LexicalIndex:
    tfs = tuple(Counter(tokenize(d)) for d in docs)
    df: Counter = Counter()
    for tf in tfs:
        df.update(tf.keys())
    vocabulary = {t: i for i, t in enumerate(sorted(df))}
    lengths = tuple(sum(tf.values()) for tf in tfs)
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return LexicalIndex(vocabulary, tfs, dict(df), lengths, avg, len(docs))


def build_lexical_index(corpus: ToolCorpus, mode=RenderMode.DESCRIPTION_ONLY) -> LexicalIndex:
    return index_documents([render_document(t, mode) for t in corpus])


def bm25_idf(n_docs: int, df: int) -> float:
    # the +1 keeps IDF positive for terms present in most documents
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_scores(query: str, index: LexicalIndex, k1: float = BM25_K1, b: float = BM25_B) -> np.ndarray:
    """BM25 score of every document. Repeated query terms count once."""
    scores = np.zeros(index.n_docs)
    if index.n_docs == 0 or index.avg_doc_length == 0:
        return scores
    terms = [t for t in dict.fromkeys(tokenize(query)) if t in index.doc_freqs]
    for t in terms:
        idf = bm25_idf(index.n_docs, index.doc_freqs[t])
        for i, tf in enumerate(index.doc_term_freqs):
            f = tf.get(t, 0)
            if f:
                norm = k1 * (1 - b + b * index.doc_lengths[i] / index.avg_doc_length)
                scores[i] += idf * f * (k1 + 1) / (f + norm)
    return scores


def tfidf_idf(n_docs: int, df: int) -> float:
    # smoothed: ln((1+N)/(1+df)) + 1 > 0, so a term unique to one doc still counts
    return math.log((1 + n_docs) / (1 + df)) + 1.0


def _tfidf_vector(tf: Counter, index: LexicalIndex) -> dict[str, float]:
    return {t: f * tfidf_idf(index.n_docs, index.doc_freqs[t])
            for t, f in tf.items() if t in index.doc_freqs}


def tfidf_scores(query: str, index: LexicalIndex) -> np.ndarray:
    """Cosine between raw-count TF-IDF vectors of the query and each document."""
    scores = np.zeros(index.n_docs)
    qvec = _tfidf_vector(Counter(tokenize(query)), index)
    qnorm = math.sqrt(sum(w * w for w in qvec.values()))
    if qnorm == 0:
        return scores
    for i, tf in enumerate(index.doc_term_freqs):
        if not any(t in tf for t in qvec):
            continue
        dvec = _tfidf_vector(tf, index)
        dnorm = math.sqrt(sum(w * w for w in dvec.values()))
        dot = sum(w * dvec.get(t, 0.0) for t, w in qvec.items())
        scores[i] = dot / (qnorm * dnorm)
    return scores


class _LexicalRetriever(BaseEstimator):
    def fit(self, X, y=None):
        """``X`` is a :class:`ToolCorpus`."""
        self.index_ = build_lexical_index(X, self.mode)
        self.ids_ = X.ids
        return self

    def predict(self, texts: Sequence[str], k=None) -> list[RankedList]:
        check_is_fitted(self, "index_")
        k = self.k if k is None else k
        return [rank(self.score(t), self.ids_, k) for t in texts]


class BM25Retriever(_LexicalRetriever):
    def __init__(self, mode="description_only", k=10, k1=BM25_K1, b=BM25_B):
        self.mode = mode
        self.k = k
        self.k1 = k1
        self.b = b

    def score(self, text: str) -> np.ndarray:
        return bm25_scores(text, self.index_, self.k1, self.b)


class TfidfRetriever(_LexicalRetriever):
    def __init__(self, mode="description_only", k=10):
        self.mode = mode
        self.k = k

    def score(self, text: str) -> np.ndarray:
        return tfidf_scores(text, self.index_)
