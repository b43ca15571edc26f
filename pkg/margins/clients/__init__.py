# margins/clients/__init__.py
"""
margins Clients Package
"""

from .scorer_client import ScorerClient, RowError, fetch_scores

__all__ = ["ScorerClient", "RowError", "fetch_scores"]
