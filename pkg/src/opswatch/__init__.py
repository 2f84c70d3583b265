"""Streaming anomaly detection for multi-dimensional service telemetry.

The pipeline ingests JSON request logs, aggregates them into fixed
5-minute windows of statistical features, scores each window with a
GRU-autoencoder reconstruction error transformed into an anomaly
likelihood, and drives an alerting/feedback loop with online and
periodic batch retraining.
"""

__version__ = "0.1.0"
