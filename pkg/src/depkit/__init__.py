"""Dependability toolkit for small feedforward ReLU networks.

Engines: scenario k-projection coverage, interval/octagon verification with
branch-and-bound, BDD activation-pattern monitoring, and perturbation and
occlusion robustness metrics.
"""

__version__ = "0.1.0"
