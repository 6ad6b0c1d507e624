"""Self-generated context documents for retrieval-augmented QA."""

__version__ = "0.1.0"
