"""Vietoris-Rips persistent homology and diagram distances."""
from .diagram import PersistenceDiagram
from .rips import Filtration, build_rips, persistence, pairwise_distances, enclosing_radius
from .fast import rips_persistence, rips_persistence_from_distances
from .distances import bottleneck, wasserstein1, pointset_wasserstein1

__all__ = [
    "PersistenceDiagram", "Filtration", "build_rips", "persistence",
    "pairwise_distances", "enclosing_radius", "rips_persistence",
    "rips_persistence_from_distances", "bottleneck", "wasserstein1",
    "pointset_wasserstein1",
]
