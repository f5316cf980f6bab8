"""Directed tool-dependency graphs.

Edges point from the depending tool to its prerequisite: ``a -> b`` means
``a`` needs ``b``'s output as an input, or needs ``b`` for prior
verification.
"""

from __future__ import annotations

import enum
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import ToolCorpus, ToolDoc, read_jsonl, write_jsonl
from .errors import RemoteError, ValidationError

DEFAULT_THRESHOLD = 0.5


class DependencyLabel(str, enum.Enum):
    A_DEPENDS_ON_B = "a_depends_on_b"
    NONE = "none"
    B_DEPENDS_ON_A = "b_depends_on_a"

    def swapped(self) -> "DependencyLabel":
        if self is DependencyLabel.A_DEPENDS_ON_B:
            return DependencyLabel.B_DEPENDS_ON_A
        if self is DependencyLabel.B_DEPENDS_ON_A:
            return DependencyLabel.A_DEPENDS_ON_B
        return self


class EdgeSource(str, enum.Enum):
    ANNOTATED = "annotated"
    CLASSIFIER = "classifier"


@dataclass(frozen=True)
class DependencyEdge:
    depender: str
    prerequisite: str
    source: EdgeSource = EdgeSource.ANNOTATED
    confidence: float = 1.0

    def __post_init__(self):
        if self.depender == self.prerequisite:
            raise ValidationError(f"self-loop on {self.depender!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"edge confidence {self.confidence} outside [0, 1]")

    @property
    def pair(self) -> tuple[str, str]:
        return self.depender, self.prerequisite

    def to_json(self) -> dict:
        return {"depender": self.depender, "prerequisite": self.prerequisite,
                "confidence": self.confidence, "source": self.source.value}


class DependencyGraph:
    """Immutable directed graph over the tools of a corpus.

    Node ``i`` is corpus position ``i``. Edges are kept sorted by
    ``(depender position, prerequisite position)``.
    """

    def __init__(self, node_order: Sequence[str], edges: Sequence[DependencyEdge]):
        self._node_order = tuple(node_order)
        self._pos = {tid: i for i, tid in enumerate(self._node_order)}
        self._edges = tuple(edges)

    @property
    def node_order(self) -> tuple[str, ...]:
        return self._node_order

    @property
    def edges(self) -> tuple[DependencyEdge, ...]:
        return self._edges

    @property
    def n_nodes(self) -> int:
        return len(self._node_order)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def edge_index(self) -> np.ndarray:
        """``(n_edges, 2)`` int array of ``(depender, prerequisite)`` positions."""
        if not self._edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([(self._pos[e.depender], self._pos[e.prerequisite]) for e in self._edges],
                        dtype=np.int64)

    def adjacency(self) -> sparse.csr_matrix:
        """0/1 matrix with ``A[i, j] = 1`` iff tool ``i`` depends on tool ``j``."""
        n = self.n_nodes
        idx = self.edge_index()
        data = np.ones(len(idx), dtype=np.float64)
        return sparse.csr_matrix((data, (idx[:, 0], idx[:, 1])), shape=(n, n))

    def __eq__(self, other) -> bool:
        return (isinstance(other, DependencyGraph)
                and self._node_order == other._node_order
                and {e.pair for e in self._edges} == {e.pair for e in other._edges})

    def __repr__(self) -> str:
        return f"DependencyGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def build_graph(corpus: ToolCorpus | Sequence[str], edges: Iterable[DependencyEdge]) -> DependencyGraph:
    """Validate ``edges`` against the corpus and build the graph.

    Repeated ``(depender, prerequisite)`` pairs keep their first occurrence.
    Both directions of a pair may be present; cycles are allowed.
    """
    ids = corpus.ids if isinstance(corpus, ToolCorpus) else list(corpus)
    pos = {tid: i for i, tid in enumerate(ids)}
    kept: dict[tuple[str, str], DependencyEdge] = {}
    for e in edges:
        for tid in e.pair:
            if tid not in pos:
                raise ValidationError(f"edge {e.depender!r} -> {e.prerequisite!r}: unknown tool id {tid!r}")
        kept.setdefault(e.pair, e)
    ordered = sorted(kept.values(), key=lambda e: (pos[e.depender], pos[e.prerequisite]))
    return DependencyGraph(ids, ordered)


def load_edges(path) -> list[DependencyEdge]:
    edges = []
    for lineno, obj in read_jsonl(path):
        try:
            if not isinstance(obj, dict) or "depender" not in obj or "prerequisite" not in obj:
                raise ValidationError("edge record needs 'depender' and 'prerequisite'")
            edges.append(DependencyEdge(
                depender=obj["depender"],
                prerequisite=obj["prerequisite"],
                source=EdgeSource(obj.get("source", "annotated")),
                confidence=float(obj.get("confidence", 1.0)),
            ))
        except (ValidationError, ValueError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return edges


def save_edges(graph: DependencyGraph, path) -> None:
    write_jsonl(path, (e.to_json() for e in graph.edges))


def classify_pair(a: ToolDoc, b: ToolDoc, client) -> tuple[DependencyLabel, float]:
    """Ask ``client`` whether ``a`` depends on ``b`` (or the reverse)."""
    label, confidence = client.classify(a.to_json(), b.to_json())
    try:
        label = DependencyLabel(label)
    except ValueError:
        raise RemoteError(f"classifier returned unknown label {label!r}") from None
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise RemoteError(f"classifier returned non-numeric confidence {confidence!r}")
    confidence = float(confidence)
    if not (0.0 <= confidence <= 1.0) or math.isnan(confidence):
        raise RemoteError(f"classifier confidence {confidence} outside [0, 1]")
    return label, confidence


def candidate_pairs(corpus: ToolCorpus, group_by_category: bool = False) -> list[tuple[int, int]]:
    """Unordered position pairs ``(i, j)``, ``i < j``, in corpus order.

    With grouping, pairs are restricted to tools sharing a category; groups
    are visited in order of first appearance.
    """
    if not group_by_category:
        return list(itertools.combinations(range(len(corpus)), 2))
    groups: dict[str, list[int]] = {}
    for pos, tool in enumerate(corpus):
        if tool.category is None:
            raise ValidationError(f"tool {tool.id!r} has no category but grouping is enabled")
        groups.setdefault(tool.category, []).append(pos)
    return [pair for members in groups.values() for pair in itertools.combinations(members, 2)]


def identify_dependencies(corpus: ToolCorpus, client, group_by_category: bool = False,
                          threshold: float = DEFAULT_THRESHOLD, max_workers: int = 1) -> list[DependencyEdge]:
    """Classify every candidate pair once and return the accepted edges.

    Requests may run concurrently (``max_workers``); results are collected
    by pair index so the output never depends on completion order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    pairs = candidate_pairs(corpus, group_by_category)
    tools = corpus.tools

    def run(pair):
        i, j = pair
        try:
            return classify_pair(tools[i], tools[j], client)
        except RemoteError as exc:
            raise RemoteError(f"classifying ({tools[i].id!r}, {tools[j].id!r}): {exc}") from exc

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]

    edges = []
    for (i, j), (label, conf) in zip(pairs, results):
        if label is DependencyLabel.NONE or conf < threshold:
            continue
        a, b = tools[i].id, tools[j].id
        if label is DependencyLabel.B_DEPENDS_ON_A:
            a, b = b, a
        edges.append(DependencyEdge(a, b, EdgeSource.CLASSIFIER, conf))
    return edges


def density(graph: DependencyGraph) -> float:
    """Fraction of nodes touching at least one edge; 0.0 for an empty graph."""
    if graph.n_nodes == 0:
        return 0.0
    idx = graph.edge_index()
    return len(np.unique(idx)) / graph.n_nodes


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: DependencyGraph) -> str:
    lines = ["digraph deps {"]
    lines.extend(f"  {_quote(tid)};" for tid in graph.node_order)
    lines.extend(f"  {_quote(e.depender)} -> {_quote(e.prerequisite)};" for e in graph.edges)
    lines.append("}")
    return "\n".join(lines) + "\n"
