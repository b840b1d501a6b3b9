"""Weakly admissible hierarchical spline meshes.

Adaptive refinement with weak admissibility, hierarchical B-spline bases,
a multilevel quasi-interpolant, and the adaptive L2-projection / Poisson
experiment drivers.
"""

__version__ = "0.1.0"
