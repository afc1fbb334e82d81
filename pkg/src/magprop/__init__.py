"""Magnetic adaptive propagation for directed graph representation learning."""

__version__ = "0.1.0"

from .graph import Digraph, compute_degrees, compute_motifs, generate_synthetic  # noqa: E402
from .magnetic import (assemble_star_mgo, build_symmetric_norm, power_iteration_top_eigenvector,  # noqa: E402
                       propagate)
from .train import TrainConfig, train  # noqa: E402

__all__ = [
    "Digraph", "compute_degrees", "compute_motifs", "generate_synthetic",
    "assemble_star_mgo", "build_symmetric_norm", "power_iteration_top_eigenvector", "propagate",
    "TrainConfig", "train",
]
