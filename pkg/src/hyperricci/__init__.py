"""Curvature-guided hypergraph diffusion."""

from .hypergraph import Dataset, Hypergraph, HypergraphError, degrees, load_dataset, load_hypergraph, normalize_rows, save_dataset
from .kernels import BACKEND

__version__ = "0.1.0"
