"""Contextual hypergraph stochastic block model and noise protocols.

Two classes of equal size.  Every hyperedge takes ``alpha`` members from one
class and ``size - alpha`` from the other; which class is the minority is a
fair coin per edge.  Features are Gaussian around a class mean
``class_sep * e_k`` in ``feature_dim`` dimensions with standard deviation
``std``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .hypergraph import Dataset, Hypergraph

__all__ = [
    "SbmConfig",
    "NoiseConfig",
    "NOISE_KINDS",
    "generate_sbm",
    "apply_feature_noise",
    "apply_structure_noise",
    "apply_noise",
    "minority_counts",
]

NOISE_KINDS = ("gaussian", "uniform", "mask", "structure")


@dataclass(frozen=True)
class SbmConfig:
    n_per_class: int = 2500
    classes: int = 2
    edges: int = 1000
    edge_size: int = 15
    alpha: int = 1
    std: float = 1.0
    seed: int = 0
    feature_dim: int = 16
    class_sep: float = 1.0

    def __post_init__(self):
        if self.classes != 2:
            raise ValueError("only two classes are supported")
        if self.edge_size < 2:
            raise ValueError("edge_size must be at least 2")
        if not 1 <= self.alpha <= self.edge_size // 2:
            raise ValueError(f"alpha must lie in [1, {self.edge_size // 2}], got {self.alpha}")
        if self.edge_size > self.n_per_class:
            raise ValueError("edge_size cannot exceed nodes per class")
        if self.edges < 1 or self.std < 0 or self.feature_dim < self.classes:
            raise ValueError("need edges >= 1, std >= 0 and feature_dim >= classes")

    def to_dict(self) -> dict:
        return asdict(self)


class _Pool:
    """Cycles through a class in random order so every node gets used."""

    def __init__(self, members: np.ndarray, rng: np.random.Generator):
        self.members = members
        self.rng = rng
        self.queue: list = []

    def take(self, k: int) -> list:
        out: list = []
        while len(out) < k:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.members))
            v = self.queue.pop()
            if v in out:
                # never twice in one edge; push back for the next edge
                self.queue.insert(0, v)
                continue
            out.append(int(v))
        return out


def generate_sbm(cfg: SbmConfig) -> Dataset:
    """Draw a hypergraph, raw features and labels.

    Node ``i`` has label ``i // n_per_class``.  Members of each class are
    consumed from a reshuffled queue, so every node lands in some hyperedge
    as long as the class receives at least ``n_per_class`` slots in total.

    Raises
    ------
    ValueError
        When the drawn edges leave some node of a class uncovered.
    """
    rng = np.random.default_rng(cfg.seed)
    npc = cfg.n_per_class
    n = npc * cfg.classes
    labels = np.repeat(np.arange(cfg.classes), npc)
    minority = rng.integers(0, 2, size=cfg.edges)
    pools = [_Pool(np.arange(c * npc, (c + 1) * npc), rng) for c in range(cfg.classes)]
    edges = []
    for e in range(cfg.edges):
        counts = [cfg.edge_size - cfg.alpha] * 2
        counts[minority[e]] = cfg.alpha
        edges.append(pools[0].take(counts[0]) + pools[1].take(counts[1]))
    covered = np.zeros(n, dtype=bool)
    for e in edges:
        covered[e] = True
    if not covered.all():
        raise ValueError(
            f"{int((~covered).sum())} nodes are in no hyperedge; raise edges or edge_size"
        )
    means = np.zeros((cfg.classes, cfg.feature_dim))
    means[np.arange(cfg.classes), np.arange(cfg.classes)] = cfg.class_sep
    X = means[labels] + cfg.std * rng.standard_normal((n, cfg.feature_dim))
    return Dataset(Hypergraph(n, edges), X, labels)


def minority_counts(h: Hypergraph, labels) -> np.ndarray:
    """Per-edge count of the less represented class."""
    labels = np.asarray(labels)
    ones = np.add.reduceat(labels[h.edge_nodes], h.edge_ptr[:-1])
    return np.minimum(ones, h.edge_size - ones)


@dataclass(frozen=True)
class NoiseConfig:
    """``sigma`` scales Gaussian noise, ``delta_scale`` the uniform half-width."""

    kind: str = "gaussian"
    rate: float = 0.1
    seed: int = 0
    sigma: float = 1.0
    delta_scale: float = 1.0
    max_tries: int = 1000

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must lie in [0, 1], got {self.rate}")


def apply_feature_noise(X_raw, cfg: NoiseConfig) -> np.ndarray:
    """Gaussian ``rate*sigma*N(0,1)``, uniform ``U(-rate*delta_scale, rate*delta_scale)``,
    or zeroing exactly ``round(rate * X.size)`` uniformly chosen entries."""
    if cfg.kind == "structure":
        raise ValueError("structure noise acts on the hypergraph; use apply_structure_noise")
    X = np.array(X_raw, dtype=np.float64)
    if cfg.rate == 0:
        return X
    rng = np.random.default_rng(cfg.seed)
    if cfg.kind == "gaussian":
        return X + cfg.rate * cfg.sigma * rng.standard_normal(X.shape)
    if cfg.kind == "uniform":
        d = cfg.rate * cfg.delta_scale
        return X + rng.uniform(-d, d, size=X.shape)
    k = int(round(cfg.rate * X.size))
    flat = X.reshape(-1)
    flat[rng.choice(X.size, size=k, replace=False)] = 0.0
    return X


def apply_structure_noise(h: Hypergraph, cfg: NoiseConfig) -> Hypergraph:
    """Delete ``round(rate*m)`` hyperedges and insert as many random ones.

    Inserted sizes are drawn from the size distribution of ``h``.  Nodes
    that lose all their edges are placed into inserted edges first; if they
    do not fit, deletions and sizes are redrawn, up to ``cfg.max_tries``.

    Raises
    ------
    RuntimeError
        When no admissible draw is found within the budget.
    """
    if cfg.kind != "structure":
        raise ValueError("apply_structure_noise needs kind='structure'")
    k = int(round(cfg.rate * h.m))
    if k == 0:
        return Hypergraph(h.n, h.edges)
    rng = np.random.default_rng(cfg.seed)
    sizes = np.asarray(h.edge_size)
    for _ in range(cfg.max_tries):
        dropped = rng.choice(h.m, size=k, replace=False)
        keep = np.ones(h.m, dtype=bool)
        keep[dropped] = False
        kept = [h.edges[i] for i in np.flatnonzero(keep)]
        covered = np.zeros(h.n, dtype=bool)
        for e in kept:
            covered[list(e)] = True
        orphans = list(rng.permutation(np.flatnonzero(~covered)))
        new_sizes = rng.choice(sizes, size=k, replace=True)
        if len(orphans) > new_sizes.sum() or np.any(new_sizes > h.n):
            continue
        new_edges = []
        for s in new_sizes:
            forced = [int(orphans.pop()) for _ in range(min(len(orphans), int(s)))]
            rest = np.setdiff1d(np.arange(h.n), forced)
            fill = rng.choice(rest, size=int(s) - len(forced), replace=False)
            new_edges.append(forced + [int(v) for v in fill])
        return Hypergraph(h.n, kept + new_edges)
    raise RuntimeError(f"structure noise could not avoid isolated nodes in {cfg.max_tries} tries")


def apply_noise(ds: Dataset, cfg: NoiseConfig) -> Dataset:
    """Apply any noise kind to a dataset, leaving the other parts untouched."""
    if cfg.kind == "structure":
        return Dataset(apply_structure_noise(ds.hypergraph, cfg), ds.features, ds.labels)
    if ds.features is None:
        raise ValueError("feature noise needs a dataset with features")
    return Dataset(ds.hypergraph, apply_feature_noise(ds.features, cfg), ds.labels, ds.weights)


def size_histogram(h: Hypergraph) -> Counter:
    return Counter(int(s) for s in h.edge_size)
