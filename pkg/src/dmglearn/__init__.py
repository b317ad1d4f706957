"""Learning cyclic causal graphs with latent confounders.

Subpackages cover the full pipeline: random ground-truth models and
interventional data simulation, an invertible implicit-flow density model
with masked networks, penalized structure learning with graphical-lasso
covariance updates, graph-equivalence checks for evaluation, and recovery
metrics. The ``dmglearn`` CLI drives generate / train / evaluate / sweep
experiments end to end.
"""

from dmglearn.graphs import DirectedMixedGraph, InterventionFamily

__all__ = ["DirectedMixedGraph", "InterventionFamily"]

__version__ = "0.1.0"
