"""Fraudulent-account detection on Ethereum-style ledgers.

Transaction ingest, per-account features, random forest, gradient boosting
and RBF-SVM classifiers written from scratch, cross-validated grid search,
and importance / ablation analysis.
"""

__version__ = "0.1.0"
