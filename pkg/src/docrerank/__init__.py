"""Document-level noisy-channel reranking of sentence translation candidates.

Per-sentence candidate pools are combined by a left-to-right beam search over
whole documents, scored by a weighted sum of proposal, document language
model, channel (reverse translation) and length terms.
"""

__version__ = "0.1.0"


class DataError(Exception):
    """Malformed or inconsistent input data (files, corpora, lattices)."""
