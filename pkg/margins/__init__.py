"""
margins - outlier-based disparity audits for toxicity classifiers
"""

__version__ = "1.0.0"
