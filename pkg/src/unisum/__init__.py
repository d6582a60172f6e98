"""unisum: a desk-scale unified extractive/abstractive summarization engine."""

__version__ = "0.1.0"
