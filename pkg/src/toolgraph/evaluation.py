"""Retrieval metrics (Recall@k, NDCG@k, Pass Rate@k) and evaluation runs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from sklearn.base import clone

from .corpus import read_jsonl
from .depgraph import DependencyGraph, density
from .encode import EmbeddingMatrix
from .errors import ValidationError
from .retrieve import RankedList


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    relevant: frozenset

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        if not self.relevant:
            raise ValidationError(f"query {self.id!r} has no relevant tools")


def load_queries(path) -> list[Query]:
    queries = []
    seen = set()
    for lineno, obj in read_jsonl(path):
        try:
            if not isinstance(obj, dict) or not {"id", "text", "relevant"} <= obj.keys():
                raise ValidationError("query record needs 'id', 'text' and 'relevant'")
            q = Query(str(obj["id"]), obj["text"], frozenset(obj["relevant"]))
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if q.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate query id {q.id!r}")
        seen.add(q.id)
        queries.append(q)
    return queries


def _ids(ranked) -> list[str]:
    return ranked.ids if isinstance(ranked, RankedList) else list(ranked)


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    return len(relevant.intersection(_ids(ranked)[:k])) / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-gain NDCG with the ideal DCG truncated at ``min(k, |relevant|)``."""
    relevant = set(relevant)
    dcg = sum(1.0 / math.log2(i + 2) for i, tid in enumerate(_ids(ranked)[:k]) if tid in relevant)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(relevant))))
    return dcg / idcg


def passed_at_k(ranked, relevant, k: int) -> bool:
    return set(relevant) <= set(_ids(ranked)[:k])


def pass_at_k(ranked_per_query: Sequence, queries: Sequence, k: int) -> float:
    """Fraction of queries whose whole ground-truth set is inside the top ``k``.

    ``queries`` may hold :class:`Query` objects or bare relevant-id sets.
    """
    if len(ranked_per_query) != len(queries):
        raise ValueError(f"{len(ranked_per_query)} rankings for {len(queries)} queries")
    if not queries:
        return 0.0
    hits = sum(passed_at_k(r, q.relevant if isinstance(q, Query) else q, k)
               for r, q in zip(ranked_per_query, queries))
    return hits / len(queries)


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    per_query: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def summary(self, config: str, k: int) -> dict:
        for row in self.rows:
            if row["config"] == config and row["k"] == k:
                return row
        raise KeyError((config, k))

    def to_json(self) -> str:
        doc = {"metadata": self.metadata, "summary": self.rows, "per_query": self.per_query}
        return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_table(self) -> str:
        header = ("config", "k", "recall", "ndcg", "pass_rate")
        body = [(r["config"], str(r["k"]), f"{r['recall']:.3f}", f"{r['ndcg']:.3f}",
                 f"{r['pass_rate']:.3f}") for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths))
                         for line in [header, *body])


def check_queries(queries: Sequence[Query], corpus_ids) -> None:
    known = set(corpus_ids)
    for q in queries:
        missing = sorted(q.relevant - known)
        if missing:
            raise ValidationError(f"query {q.id!r} references unknown tool id {missing[0]!r}")


def evaluate(queries: Sequence[Query], retrievers: Mapping[str, object], ks: Sequence[int],
             corpus_ids=None, metadata: Mapping[str, dict] | None = None) -> EvalReport:
    """Score each named retriever on ``queries`` at every cutoff in ``ks``.

    A retriever is anything with ``predict(texts, k=...) -> list[RankedList]``.
    Each is run once at ``max(ks)``; smaller cutoffs reuse that ranking.
    Metrics are macro-averaged over queries.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be nonempty positive integers")
    if not queries:
        raise ValidationError("no queries to evaluate")
    if corpus_ids is None:
        corpus_ids = next(iter(retrievers.values())).ids_
    check_queries(queries, corpus_ids)

    report = EvalReport(metadata={name: dict((metadata or {}).get(name, {})) for name in retrievers})
    texts = [q.text for q in queries]
    for name, retriever in retrievers.items():
        ranked = retriever.predict(texts, k=ks[-1])
        for k in ks:
            rows = []
            for q, r in zip(queries, ranked):
                rows.append({"config": name, "k": k, "query_id": q.id,
                             "recall": recall_at_k(r, q.relevant, k),
                             "ndcg": ndcg_at_k(r, q.relevant, k),
                             "passed": passed_at_k(r, q.relevant, k),
                             "retrieved": r.ids[:k]})
            n = len(rows)
            report.rows.append({
                "config": name, "k": k, "n_queries": n,
                "recall": sum(r["recall"] for r in rows) / n,
                "ndcg": sum(r["ndcg"] for r in rows) / n,
                "pass_rate": sum(r["passed"] for r in rows) / n,
            })
            report.per_query.extend(rows)
    return report


@dataclass(frozen=True)
class DensityGroup:
    """One tool category: its graph, raw embeddings and evaluation queries."""

    name: str
    graph: DependencyGraph
    embeddings: EmbeddingMatrix
    queries: Sequence[Query]


@dataclass(frozen=True)
class DensityRow:
    name: str
    density: float
    recall_base: float
    recall_tgr: float

    @property
    def delta_recall(self) -> float:
        return self.recall_tgr - self.recall_base


def recall_increment_by_density(groups: Sequence[DensityGroup], base, propagator, k: int = 5) -> list[DensityRow]:
    """Recall@k gain of propagated over raw embeddings, per group, by density.

    ``base`` is an unfitted dense retriever used for both arms; ``propagator``
    is an unfitted :class:`~toolgraph.encode.GraphPropagator` whose ``graph``
    is replaced by each group's graph.
    """
    out = []
    for g in groups:
        raw = clone(base).fit(g.embeddings)
        prop = clone(propagator).set_params(graph=g.graph).fit(g.embeddings).transform(g.embeddings)
        tgr = clone(base).fit(prop)
        report = evaluate(g.queries, {"base": raw, "tgr": tgr}, [k], corpus_ids=g.embeddings.node_order)
        out.append(DensityRow(g.name, density(g.graph),
                              report.summary("base", k)["recall"], report.summary("tgr", k)["recall"]))
    out.sort(key=lambda r: (r.density, r.name))
    return out


def density_rows_to_csv(rows: Sequence[DensityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "density", "recall_base", "recall_tgr", "delta_recall"])
    for r in rows:
        w.writerow([r.name, repr(r.density), repr(r.recall_base), repr(r.recall_tgr), repr(r.delta_recall)])
    return buf.getvalue()
