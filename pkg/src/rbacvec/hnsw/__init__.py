"""HNSW graph index with plain, filtered and resumable bounded search."""
from .cursor import SearchCursor
from .index import HnswIndex, HnswParams, SearchParams, sample_levels

__all__ = ["HnswIndex", "HnswParams", "SearchParams", "SearchCursor", "sample_levels"]
