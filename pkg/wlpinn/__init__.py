"""Weighted-loss decomposition PINNs for singularly perturbed boundary-layer problems."""

__version__ = "2026.10"
