"""Embedding exporter: writes static word-vector tables (word2vec text) and
per-token contextual vector files (JSONL) for the expframe feature pipeline.

Files are the only interface to the consumer; this package imports nothing
from it.
"""

__version__ = "0.1.0"
