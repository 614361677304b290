"""Driver-state causal analysis toolkit.

Raw-biosignal feature extraction, double machine learning with K-fold
cross-fitting and robust inference, heterogeneity interpretation trees,
and synthetic structural-causal-model benchmarks with known ground truth.
"""

__version__ = "0.1.0"
