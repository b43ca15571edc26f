# margins/services/__init__.py
"""
margins Services Package
Dataset loading, embeddings, LOF detection, audit statistics, sweeps and the stage pipeline
"""
