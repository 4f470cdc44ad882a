"""Unsupervised anomaly detection and diagnosis for multivariate time series.

The package learns normal behavior by reconstructing windows together
with their temporal and spatial state matrices through a three-branch
attention model, then scores, localizes, and sizes anomalies from the
reconstruction residuals.
"""

__version__ = "0.1.0"
