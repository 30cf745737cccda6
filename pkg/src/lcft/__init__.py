"""Stress-energy correlations of Liouville theory on the sphere.

Modules: geometry (metrics, curvature, anomaly), field (free field, Green
function, chaos), correlator (Monte Carlo vertex correlations), beltrami
(metric decomposition), symbolic (Ward recursion), virasoro (contour
pairings), xcheck (metric derivative against the Ward prediction) and cli.
"""

__version__ = "0.1.0"
