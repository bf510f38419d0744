"""Forman-Ricci and Ollivier-Ricci curvature of hyperedges.

Node weights are fixed to 1 throughout.  Conventions that the underlying
formulas leave open are exposed as keyword switches:

``include_self`` (Forman)
    Whether the attachment sum over hyperedges meeting ``k in e`` also
    counts ``e`` itself.  Default ``False``.
``keep_self`` (Ollivier)
    Whether the random-walk measure of a node keeps its own (self) mass.
    Default ``False``: self mass is dropped and the rest renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .hypergraph import Hypergraph
from .kernels import transport_cost

__all__ = [
    "NodeMeasure",
    "MetricOracle",
    "forman_curvature",
    "node_measure",
    "wasserstein1",
    "ollivier_curvature",
    "curvature",
    "CURVATURE_KINDS",
]

CURVATURE_KINDS = ("forman", "ollivier")


def _check_weights(h: Hypergraph, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (h.m,):
        raise ValueError(f"expected {h.m} edge weights, got shape {w.shape}")
    bad = np.flatnonzero(~(w > 0))
    if bad.size:
        raise ValueError(f"nonpositive weight {w[bad[0]]!r} on edge {int(bad[0])}")
    return w


def forman_curvature(h: Hypergraph, w, include_self: bool = False) -> np.ndarray:
    """Forman-Ricci curvature ``|e| - sum_{k in e} sum_{f ∋ k} w_e / sqrt(w_f)``."""
    w = _check_weights(h, w)
    inv_sqrt = 1.0 / np.sqrt(w)
    # T_k = sum over edges containing node k of 1/sqrt(w_f)
    T = np.bincount(h.edge_nodes, weights=inv_sqrt[h.edge_of_incidence], minlength=h.n)
    attach = np.add.reduceat(T[h.edge_nodes], h.edge_ptr[:-1])
    if not include_self:
        attach = attach - h.edge_size * inv_sqrt
    return h.edge_size - w * attach


@dataclass(frozen=True)
class NodeMeasure:
    """Probability measure on a set of nodes."""

    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.mass.shape:
            raise ValueError("support and mass must have the same length")
        if np.any(self.mass < 0):
            raise ValueError("negative mass")
        if abs(self.mass.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {self.mass.sum()!r}, not 1")

    def as_dict(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.support, self.mass)}


def node_measure(h: Hypergraph, w, i: int, keep_self: bool = False) -> NodeMeasure:
    """Two-step random-walk measure of node ``i``.

    Raw mass ``mu_i(j) = sum_{e ⊇ {i,j}} w_e / (sum_{f ∋ i} w_f) / |e|``.
    """
    w = np.asarray(w, dtype=np.float64)
    inc = h.node_edges[i]
    total = w[inc].sum()
    acc: dict[int, float] = {}
    for e in inc:
        share = w[e] / total / h.edge_size[e]
        for j in h.edges[e]:
            acc[j] = acc.get(j, 0.0) + share
    if not keep_self:
        acc.pop(i, None)
    support = np.fromiter(sorted(acc), dtype=np.int64, count=len(acc))
    mass = np.array([acc[j] for j in support])
    mass /= mass.sum()
    return NodeMeasure(support, mass)


class MetricOracle:
    """Hop distances on the clique expansion, computed by BFS and cached per source."""

    def __init__(self, h: Hypergraph):
        self.h = h
        self._rows: dict[int, np.ndarray] = {}

    def rows(self, sources) -> np.ndarray:
        sources = [int(s) for s in sources]
        missing = [s for s in dict.fromkeys(sources) if s not in self._rows]
        if missing:
            D = shortest_path(self.h.clique_adjacency, unweighted=True, directed=False, indices=missing)
            for s, row in zip(missing, np.atleast_2d(D)):
                self._rows[s] = row
        return np.stack([self._rows[s] for s in sources])

    def distance(self, u: int, v: int) -> float:
        return float(self.rows([u])[0, v])

    def matrix(self, src, dst) -> np.ndarray:
        return self.rows(src)[:, np.asarray(dst, dtype=np.int64)]


def wasserstein1(a: NodeMeasure, b: NodeMeasure, d: MetricOracle) -> float:
    """Exact 1-Wasserstein distance between two node measures under ``d``."""
    cost = d.matrix(a.support, b.support)
    if not np.all(np.isfinite(cost)):
        r, c = np.argwhere(~np.isfinite(cost))[0]
        raise ValueError(f"nodes {int(a.support[r])} and {int(b.support[c])} are not connected")
    return float(transport_cost(a.mass, b.mass, cost))


def ollivier_curvature(h: Hypergraph, w, keep_self: bool = False,
                       metric: MetricOracle | None = None) -> np.ndarray:
    """Ollivier-Ricci curvature averaged over unordered member pairs of each edge."""
    w = _check_weights(h, w)
    metric = metric or MetricOracle(h)
    measures: dict[int, NodeMeasure] = {}

    def mu(i):
        if i not in measures:
            measures[i] = node_measure(h, w, i, keep_self=keep_self)
        return measures[i]

    kappa = np.empty(h.m)
    for k, e in enumerate(h.edges):
        total = 0.0
        for i, j in combinations(e, 2):
            dij = metric.distance(i, j)
            if not np.isfinite(dij) or dij <= 0:
                raise ValueError(f"edge {k}: nodes {i} and {j} are not connected")
            total += wasserstein1(mu(i), mu(j), metric) / dij
        size = len(e)
        kappa[k] = 1.0 - 2.0 * total / (size * (size - 1))
    return kappa


def curvature(h: Hypergraph, w, kind: str = "forman", **options) -> np.ndarray:
    """Dispatch to :func:`forman_curvature` or :func:`ollivier_curvature`."""
    kind = kind.lower()
    if kind == "forman":
        return forman_curvature(h, w, **options)
    if kind == "ollivier":
        return ollivier_curvature(h, w, **options)
    raise ValueError(f"unknown curvature kind {kind!r}; expected one of {CURVATURE_KINDS}")
