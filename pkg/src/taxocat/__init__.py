"""taxocat: zero-shot hierarchical multi-label classification over large, dynamic taxonomies.

Pipeline: a bi-encoder prunes the label taxonomy down to the top-k most
similar leaves per document, then an LLM-driven strategy (traversal,
one-pass selection, rerank, or pointwise selection) picks the final leaf
labels, followed by post-processing and an evaluation harness for SME
judgments.
"""

__version__ = "0.1.0"
