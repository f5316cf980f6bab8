"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 remote failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .clients import HttpClassifier, HttpEmbedder
from .corpus import RenderMode, load_corpus
from .depgraph import build_graph, density, identify_dependencies, load_edges, to_dot
from .encode import GraphPropagator, PropagationDirection, embed_corpus, load_embeddings, propagate
from .errors import RemoteError, ValidationError
from .evaluation import (DensityGroup, density_rows_to_csv, evaluate, load_queries,
                         recall_increment_by_density)
from .index import CORPUS, IndexDirectory
from .lexical import BM25Retriever, TfidfRetriever
from .retrieve import DenseRetriever, SimilarityMethod

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_REMOTE = 0, 2, 3, 4

CONFIGS = ("dense", "dense+tgr", "bm25", "tfidf")

logger = logging.getLogger("toolgraph")


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s!r} must be >= 1")
    return v


def _k_list(s: str) -> list[int]:
    ks = [_positive_int(p) for p in s.split(",") if p.strip()]
    if not ks:
        raise argparse.ArgumentTypeError("empty k list")
    if ks != sorted(set(ks)):
        raise argparse.ArgumentTypeError("k values must be strictly ascending")
    return ks


def _threshold(s: str) -> float:
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("threshold must lie in [0, 1]")
    return v


def _config_list(s: str) -> list[str]:
    out = [c.strip() for c in s.split(",") if c.strip()]
    bad = [c for c in out if c not in CONFIGS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown config {bad[0] if bad else s!r}; choose from {CONFIGS}")
    return out


def _default_jobs() -> int:
    return int(os.environ.get("TGR_PARALLELISM", "1"))


def _embedder(args) -> HttpEmbedder:
    url = args.embedder_url or os.environ.get("TGR_EMBEDDER_URL")
    if not url:
        raise UsageError("an embedder URL is required (--embedder-url or TGR_EMBEDDER_URL)")
    return HttpEmbedder(url)


class UsageError(Exception):
    pass


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus)
    idx = IndexDirectory.create(args.out_dir)
    with idx.lock():
        if (idx.path / "meta.json").exists():
            idx = IndexDirectory.open(args.out_dir)
        idx.write_corpus(corpus)
        idx.save_meta()
    _emit(f'{{"tools": {len(corpus)}, "corpus_sha256": "{idx.digest(CORPUS)}"}}')
    return EXIT_OK


def cmd_deps(args) -> int:
    if bool(args.edges) == bool(args.classifier_url):
        raise UsageError("give exactly one of --edges or --classifier-url")
    idx = IndexDirectory.open(args.index)
    with idx.lock():
        corpus = idx.corpus()
        if args.edges:
            edges = load_edges(args.edges)
        else:
            with HttpClassifier(args.classifier_url) as client:
                edges = identify_dependencies(corpus, client, args.group_by_category,
                                              args.threshold, args.jobs)
        graph = build_graph(corpus, edges)
        idx.write_graph(graph)
        idx.save_meta()
    _emit(f'{{"nodes": {graph.n_nodes}, "edges": {graph.n_edges}, "density": {density(graph)!r}}}')
    return EXIT_OK


def cmd_embed(args) -> int:
    if bool(args.embeddings) == bool(args.embedder_url):
        raise UsageError("give exactly one of --embeddings or --embedder-url")
    idx = IndexDirectory.open(args.index)
    with idx.lock():
        corpus = idx.corpus()
        if args.embeddings:
            matrix = load_embeddings(args.embeddings, corpus)
        else:
            with HttpEmbedder(args.embedder_url) as client:
                matrix = embed_corpus(corpus, client, args.mode, args.batch_size, args.jobs)
        idx.write_embeddings(matrix, args.mode)
        idx.save_meta()
    n, d = matrix.shape
    _emit(f'{{"rows": {n}, "dim": {d}, "mode": "{args.mode}"}}')
    return EXIT_OK


def cmd_propagate(args) -> int:
    idx = IndexDirectory.open(args.index)
    with idx.lock():
        corpus = idx.corpus()
        raw = idx.embeddings(corpus=corpus)
        out = propagate(raw, idx.graph(corpus), args.direction, args.rounds)
        idx.write_propagated(out, args.direction, args.rounds)
        idx.save_meta()
    _emit(f'{{"provenance": "{out.provenance}"}}')
    return EXIT_OK


def cmd_retrieve(args) -> int:
    import json

    idx = IndexDirectory.open(args.index)
    matrix = idx.embeddings(propagated=args.propagated)
    with _embedder(args) as client:
        ranked = DenseRetriever(client, args.similarity, args.k).fit(matrix).predict([args.query])[0]
    _emit(json.dumps(ranked.to_json(), ensure_ascii=False))
    return EXIT_OK


def _build_retrievers(idx, configs, args, client):
    corpus = idx.corpus()
    mode = args.mode or idx.meta.get("render_mode") or RenderMode.DESCRIPTION_ONLY.value
    retrievers, meta = {}, {}
    for name in configs:
        if name == "bm25":
            retrievers[name] = BM25Retriever(mode=mode).fit(corpus)
            meta[name] = {"render_mode": mode, "k1": retrievers[name].k1, "b": retrievers[name].b}
        elif name == "tfidf":
            retrievers[name] = TfidfRetriever(mode=mode).fit(corpus)
            meta[name] = {"render_mode": mode}
        else:
            propagated = name == "dense+tgr"
            matrix = idx.embeddings(propagated=propagated, corpus=corpus)
            retrievers[name] = DenseRetriever(client, args.similarity, batch_size=args.batch_size,
                                              n_jobs=args.jobs).fit(matrix)
            m = {"similarity": args.similarity, "render_mode": idx.meta.get("render_mode")}
            if propagated:
                prop = idx.meta["propagation"]
                m.update(direction=prop["direction"], rounds=prop["rounds"],
                         graph_source=sorted({e.source.value for e in idx.graph(corpus).edges}))
            meta[name] = m
    return corpus, retrievers, meta


def cmd_eval(args) -> int:
    idx = IndexDirectory.open(args.index)
    queries = load_queries(args.queries)
    needs_dense = any(c.startswith("dense") for c in args.config)
    client = _embedder(args) if needs_dense else None
    try:
        corpus, retrievers, meta = _build_retrievers(idx, args.config, args, client)
        report = evaluate(queries, retrievers, args.k, corpus.ids, meta)
    finally:
        if client is not None:
            client.close()
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.verbose:
        print(report.to_table(), file=sys.stderr)
    _emit(text)
    return EXIT_OK


def cmd_export_dot(args) -> int:
    idx = IndexDirectory.open(args.index)
    sys.stdout.write(to_dot(idx.graph()))
    return EXIT_OK


def cmd_density_report(args) -> int:
    if len(args.queries) != len(args.indexes):
        raise UsageError("give one --queries file per index directory")
    groups = []
    for path, qpath in zip(args.indexes, args.queries):
        idx = IndexDirectory.open(path)
        corpus = idx.corpus()
        groups.append(DensityGroup(Path(path).name, idx.graph(corpus),
                                   idx.embeddings(corpus=corpus), load_queries(qpath)))
    with _embedder(args) as client:
        base = DenseRetriever(client, args.similarity, batch_size=args.batch_size, n_jobs=args.jobs)
        rows = recall_increment_by_density(
            groups, base, GraphPropagator(direction=args.direction, rounds=args.rounds), args.k)
    text = density_rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toolgraph", description="Dependency-aware tool retrieval.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def jobs(sp):
        sp.add_argument("--jobs", type=_positive_int, default=_default_jobs(),
                        help="max in-flight endpoint requests (env TGR_PARALLELISM)")

    def embedder(sp):
        sp.add_argument("--embedder-url", help="embedder base URL (env TGR_EMBEDDER_URL)")

    def similarity(sp):
        sp.add_argument("--similarity", choices=[m.value for m in SimilarityMethod], default="cosine")

    sp = sub.add_parser("ingest", help="validate a corpus and start an index directory")
    sp.add_argument("corpus")
    sp.add_argument("out_dir")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("deps", help="store dependency edges")
    sp.add_argument("index")
    sp.add_argument("--edges", help="JSON Lines edge file")
    sp.add_argument("--classifier-url", default=os.environ.get("TGR_CLASSIFIER_URL"),
                    help="classifier base URL (env TGR_CLASSIFIER_URL)")
    sp.add_argument("--group-by-category", action="store_true")
    sp.add_argument("--threshold", type=_threshold, default=0.5)
    jobs(sp)
    sp.set_defaults(func=cmd_deps)

    sp = sub.add_parser("embed", help="store raw tool embeddings")
    sp.add_argument("index")
    sp.add_argument("--embeddings", help="embedding file to import")
    embedder(sp)
    sp.add_argument("--mode", choices=[m.value for m in RenderMode], default="description_only")
    sp.add_argument("--batch-size", type=_positive_int, default=32)
    jobs(sp)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("propagate", help="propagate embeddings over the dependency graph")
    sp.add_argument("index")
    sp.add_argument("--direction", choices=[d.value for d in PropagationDirection], default="reverse")
    sp.add_argument("--rounds", type=_positive_int, default=1)
    sp.set_defaults(func=cmd_propagate)

    sp = sub.add_parser("retrieve", help="top-k tools for one query")
    sp.add_argument("index")
    sp.add_argument("--query", required=True)
    sp.add_argument("--k", type=_positive_int, required=True)
    similarity(sp)
    which = sp.add_mutually_exclusive_group()
    which.add_argument("--raw", dest="propagated", action="store_false")
    which.add_argument("--propagated", dest="propagated", action="store_true")
    sp.set_defaults(propagated=False)
    embedder(sp)
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("eval", help="Recall/NDCG/Pass Rate over a query file")
    sp.add_argument("index")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--k", type=_k_list, default=[5, 10])
    sp.add_argument("--config", type=_config_list, default=["dense"],
                    help=f"comma-separated subset of {','.join(CONFIGS)}")
    sp.add_argument("--mode", choices=[m.value for m in RenderMode],
                    help="render mode for lexical baselines (default: the index's)")
    sp.add_argument("--batch-size", type=_positive_int, default=32)
    sp.add_argument("--out", help="also write the JSON report here")
    sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                    help="print a summary table to stderr")
    similarity(sp)
    embedder(sp)
    jobs(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-dot", help="print the dependency graph as DOT")
    sp.add_argument("index")
    sp.set_defaults(func=cmd_export_dot)

    sp = sub.add_parser("density-report", help="recall gain vs graph density, CSV")
    sp.add_argument("indexes", nargs="+", metavar="INDEX")
    sp.add_argument("--queries", nargs="+", required=True, help="one query file per index, same order")
    sp.add_argument("--k", type=_positive_int, default=5)
    sp.add_argument("--direction", choices=[d.value for d in PropagationDirection], default="reverse")
    sp.add_argument("--rounds", type=_positive_int, default=1)
    sp.add_argument("--batch-size", type=_positive_int, default=32)
    sp.add_argument("--out")
    similarity(sp)
    embedder(sp)
    jobs(sp)
    sp.set_defaults(func=cmd_density_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"toolgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"toolgraph: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RemoteError as exc:
        print(f"toolgraph: remote error: {exc}", file=sys.stderr)
        return EXIT_REMOTE


if __name__ == "__main__":
    sys.exit(main())
