"""Explainable throughput prediction for RAN KPM streams.

Synthetic periodic-burst trace generation, a small attention-based
predictor with exact analytic gradients, four attribution methods
(attention, integrated gradients, sampled SHAP, and the attention+IG
hybrid), local-surrogate fidelity metrics, paired block-bootstrap
comparison, latency budgeting, and an in-process publish/subscribe
pipeline simulation of the predictor/explainer xApp pair.
"""

__version__ = "0.1.0"
