"""Hierarchical federated learning simulator: cost model, scheduling,
assignment, resource allocation and experiment harness."""

__version__ = "0.1.0"
