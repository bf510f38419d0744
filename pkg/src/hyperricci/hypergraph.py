"""Weighted hypergraph container, degree bookkeeping and the on-disk format.

Hyperedges are kept as sorted node tuples together with a CSR-style flat
incidence (``edge_ptr``/``edge_nodes``).  A dense incidence matrix is never
built; the scipy sparse incidence is created lazily for matrix routines.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Hypergraph",
    "HypergraphError",
    "Dataset",
    "degrees",
    "normalize_rows",
    "load_hypergraph",
    "load_dataset",
    "save_dataset",
]


class HypergraphError(ValueError):
    """Raised for structurally invalid hypergraph input."""


class Hypergraph:
    """Immutable hypergraph on nodes ``0..n-1``.

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : sequence of sequences of int
        Vertex set of each hyperedge.  Order inside an edge is irrelevant; it
        is stored sorted.

    Raises
    ------
    HypergraphError
        On out-of-range indices, duplicate nodes inside an edge, edges with
        fewer than two nodes, an empty edge list or isolated nodes.
    """

    def __init__(self, n: int, edges: Sequence[Sequence[int]]):
        n = int(n)
        if n <= 0:
            raise HypergraphError("hypergraph needs at least one node")
        if len(edges) == 0:
            raise HypergraphError("hypergraph needs at least one hyperedge (m=0)")
        canon = []
        for k, e in enumerate(edges):
            nodes = [int(v) for v in e]
            if len(nodes) < 2:
                raise HypergraphError(f"edge {k} has size {len(nodes)} < 2")
            if len(set(nodes)) != len(nodes):
                raise HypergraphError(f"duplicate node in edge {k}")
            for v in nodes:
                if v < 0 or v >= n:
                    raise HypergraphError(f"node index {v} out of range [0, {n}) in edge {k}")
            canon.append(tuple(sorted(nodes)))
        self.n = n
        self.edges: tuple[tuple[int, ...], ...] = tuple(canon)
        self.edge_size = np.fromiter((len(e) for e in canon), dtype=np.int64, count=len(canon))
        self.edge_ptr = np.zeros(len(canon) + 1, dtype=np.int64)
        np.cumsum(self.edge_size, out=self.edge_ptr[1:])
        self.edge_nodes = np.fromiter((v for e in canon for v in e), dtype=np.int64,
                                      count=int(self.edge_ptr[-1]))
        self.node_degree = np.bincount(self.edge_nodes, minlength=n).astype(np.int64)
        isolated = np.flatnonzero(self.node_degree == 0)
        if isolated.size:
            raise HypergraphError(
                f"isolated node {int(isolated[0])} (in no hyperedge); {isolated.size} isolated in total"
            )
        for arr in (self.edge_size, self.edge_ptr, self.edge_nodes, self.node_degree):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def n_incidences(self) -> int:
        return int(self.edge_ptr[-1])

    def __repr__(self) -> str:
        return f"Hypergraph(n={self.n}, m={self.m}, incidences={self.n_incidences})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return self.n == other.n and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.n, self.edges))

    @cached_property
    def edge_of_incidence(self) -> np.ndarray:
        """Edge index for every entry of ``edge_nodes``."""
        return np.repeat(np.arange(self.m, dtype=np.int64), self.edge_size)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Sparse n x m 0/1 incidence matrix H."""
        data = np.ones(self.n_incidences)
        return sp.csr_matrix((data, (self.edge_nodes, self.edge_of_incidence)), shape=(self.n, self.m))

    @cached_property
    def node_edges(self) -> tuple[np.ndarray, ...]:
        """For each node, the sorted array of hyperedges containing it."""
        order = np.argsort(self.edge_nodes, kind="stable")
        split = np.cumsum(self.node_degree)[:-1]
        return tuple(np.split(self.edge_of_incidence[order], split))

    @cached_property
    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All ordered within-edge pairs ``(i, j, e)`` including ``i == j``.

        There are ``sum_e |e|^2`` rows; this is the support used for the
        cosine matrix and the edge-loop form of the feature dynamics.
        """
        ii, jj, ee = [], [], []
        for k, e in enumerate(self.edges):
            a = np.asarray(e, dtype=np.int64)
            ii.append(np.repeat(a, a.size))
            jj.append(np.tile(a, a.size))
            ee.append(np.full(a.size * a.size, k, dtype=np.int64))
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(ee)

    @cached_property
    def clique_adjacency(self) -> sp.csr_matrix:
        """Unweighted adjacency of the clique expansion (no self loops)."""
        H = self.incidence
        A = (H @ H.T).tocsr()
        A.setdiag(0)
        A.eliminate_zeros()
        A.data[:] = 1.0
        return A

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "edges": [list(e) for e in self.edges]}


def degrees(h: Hypergraph) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(node_degree, edge_size)`` as integer arrays."""
    return h.node_degree.copy(), h.edge_size.copy()


def normalize_rows(X, tol: float = 0.0) -> np.ndarray:
    """Scale every row of ``X`` to unit Euclidean norm.

    Raises
    ------
    ValueError
        If a row is all zeros (or has norm ``<= tol``) or contains NaN/Inf.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X))[0, 0])
        raise ValueError(f"non-finite feature in row of node {bad}")
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms <= tol)
    if zero.size:
        raise ValueError(f"zero feature row for node {int(zero[0])}")
    return X / norms[:, None]


@dataclass
class Dataset:
    """A hypergraph plus the optional per-node and per-edge payload of a file."""

    hypergraph: Hypergraph
    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        h = self.hypergraph
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != h.n:
                raise HypergraphError(f"features must have {h.n} rows, got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (h.n,):
                raise HypergraphError(f"labels must have length {h.n}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (h.m,):
                raise HypergraphError(f"weights must have length {h.m}")
            if np.any(self.weights <= 0):
                raise HypergraphError(f"nonpositive weight on edge {int(np.argmin(self.weights))}")


def _parse(doc: dict) -> tuple[Hypergraph, dict]:
    if "n" not in doc or "edges" not in doc:
        raise HypergraphError("document needs 'n' and 'edges'")
    edges = doc["edges"]
    if "m" in doc and int(doc["m"]) != len(edges):
        raise HypergraphError(f"header m={doc['m']} but {len(edges)} edges listed")
    return Hypergraph(doc["n"], edges), doc


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read a hypergraph file together with features, labels and weights."""
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    h, doc = _parse(doc)
    features = None
    if doc.get("features"):
        fpath = doc["features"]
        if not os.path.isabs(fpath):
            fpath = os.path.join(os.path.dirname(path), fpath)
        features = np.loadtxt(fpath, delimiter=",", dtype=np.float64, ndmin=2)
    return Dataset(h, features, doc.get("labels"), doc.get("weights"))


def load_hypergraph(path: str | os.PathLike) -> Hypergraph:
    """Read only the incidence structure of a hypergraph file."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    return _parse(doc)[0]


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write ``ds`` in canonical form; features go to a sibling CSV file."""
    path = os.fspath(path)
    doc = ds.hypergraph.to_dict()
    if ds.features is not None:
        stem = os.path.splitext(os.path.basename(path))[0]
        fname = stem + ".features.csv"
        with open(os.path.join(os.path.dirname(path) or ".", fname), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in ds.features:
                writer.writerow([repr(float(x)) for x in row])
        doc["features"] = fname
    if ds.labels is not None:
        doc["labels"] = [int(y) for y in ds.labels]
    if ds.weights is not None:
        doc["weights"] = [float(w) for w in ds.weights]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
