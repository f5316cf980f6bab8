"""Tool retrieval with dependency-aware embeddings.

Tool embeddings are mixed along a directed tool-dependency graph with a
parameter-free normalized graph convolution, so prerequisite tools pick up
the semantics of the tools that need them. Lexical baselines and an
evaluation harness (Recall@k, NDCG@k, Pass Rate@k) are included.
"""

from .corpus import Parameter, RenderMode, ToolCorpus, ToolDoc, load_corpus, render_document, save_corpus
from .depgraph import (DependencyEdge, DependencyGraph, DependencyLabel, EdgeSource, build_graph,
                       classify_pair, density, identify_dependencies, load_edges, save_edges, to_dot)
from .encode import (EmbeddingMatrix, GraphPropagator, PropagationDirection, embed_corpus,
                     load_embeddings, propagate, write_embeddings)
from .errors import RemoteError, ValidationError
from .evaluation import (DensityGroup, DensityRow, EvalReport, Query, evaluate, load_queries,
                         ndcg_at_k, pass_at_k, recall_at_k, recall_increment_by_density)
from .lexical import (BM25Retriever, LexicalIndex, TfidfRetriever, bm25_scores, build_lexical_index,
                      tfidf_scores, tokenize)
from .retrieve import DenseRetriever, RankedList, SimilarityMethod, retrieve, retrieve_batch, similarity

__version__ = "0.1.0"
