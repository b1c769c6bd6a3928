"""Knowledge-graph-enhanced document-level event extraction."""

__version__ = "0.1.0"
