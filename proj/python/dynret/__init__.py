"""Python bindings for the dynret retrieval library."""

from ._dynret import (
    Corpus,
    DynretError,
    Retriever,
    UsageError,
    bm25_search,
    config_hash,
    evaluate,
    evaluate_files,
    gradcheck,
    merge,
    mrr,
    read_run,
    recall_at_k,
    run_cli,
    synthesize,
    tokenize,
)

__all__ = [
    "Corpus",
    "DynretError",
    "Retriever",
    "UsageError",
    "bm25_search",
    "config_hash",
    "evaluate",
    "evaluate_files",
    "gradcheck",
    "merge",
    "mrr",
    "read_run",
    "recall_at_k",
    "run_cli",
    "synthesize",
    "tokenize",
]
