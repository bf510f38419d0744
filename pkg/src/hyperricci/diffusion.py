"""Curvature-modulated feature dynamics on a hypergraph.

The right-hand side is ``F(X) X`` with

    S = D_v^{-1/2} H K' H^T D_v^{-1/2},   F = diag((S ⊙ C) 1) - S,

``K' = diag(kprime)`` the per-edge aggregation weights and ``C`` the cosine
similarity of features.  Time stepping is explicit Euler,
``X <- X - tau F(X) X``, optionally followed by row renormalization.

Two evaluation routes exist on purpose: :func:`node_update_direction` walks
hyperedges one by one (compiled kernel), :func:`assemble_matrices` builds the
sparse matrices; :func:`apply_operator` is the factored fast path used while
stepping, relying on ``(S ⊙ C) 1 = rowdot(U, S U)`` for unit rows ``U``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .curvature import curvature as _curvature
from .flow import WeightRuleConfig, attribute_weight, dirichlet_energy, energy_bounds, EnergyReport
from .hypergraph import Hypergraph, normalize_rows
from .kernels import edge_direction

__all__ = [
    "DiffusionConfig",
    "StabilityCertificate",
    "StabilityError",
    "DivergenceError",
    "DiffusionResult",
    "analytic_kprime",
    "analytic_provider",
    "node_update_direction",
    "assemble_matrices",
    "apply_operator",
    "row_sums",
    "stability_bound",
    "euler_step",
    "rk4_step",
    "diffuse",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionConfig:
    tau: float = 0.5
    T: int = 4
    mode: str = "analytic"
    use_cosine: bool = True
    epsilon_denominator: float = 1e-3
    renormalize_each_step: bool = True
    curvature: str = "forman"
    weight_epsilon: float = 1e-3

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.mode not in ("analytic", "learned"):
            raise ValueError("mode must be 'analytic' or 'learned'")
        if not 0 < self.epsilon_denominator <= 1:
            raise ValueError("epsilon_denominator must lie in (0, 1]")


@dataclass
class StabilityCertificate:
    max_row_sum: float
    tau_bound: Optional[float]
    tau_used: Optional[float] = None
    applicable: bool = True

    @property
    def stable(self) -> Optional[bool]:
        if not self.applicable or self.tau_used is None:
            return None
        return self.tau_used <= self.tau_bound

    def to_dict(self) -> dict:
        return {
            "max_row_sum": self.max_row_sum,
            "tau_bound": self.tau_bound,
            "tau_used": self.tau_used,
            "applicable": self.applicable,
            "stable": self.stable,
        }


class StabilityError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


def _isd(h: Hypergraph) -> np.ndarray:
    return 1.0 / np.sqrt(h.node_degree.astype(np.float64))


def analytic_kprime(h: Hypergraph, X, kappa, w, epsilon_denominator: float = 1e-3,
                    per_node: bool = False):
    """Closed-form aggregation weights with unit scaling functions.

    For node ``i`` in edge ``e``::

        mu_e     = -kappa_e w_e / |e|
        m_ie     = (1/S_e) sum_{j in e} x_j / sqrt(d_i d_j)
        kp_ie    = mu_e / (max(1 - (x_i . m_ie)^2, eps) * S_e)

    and the edge value is the mean of ``kp_ie`` over members.

    Returns
    -------
    kprime : (m,) array
        Edge-level weights.
    kp_node : (N,) array
        Only when ``per_node``; values aligned with ``h.edge_nodes``.
    """
    X = np.asarray(X, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    isd = _isd(h)
    ptr = h.edge_ptr[:-1]
    R = np.add.reduceat(X[h.edge_nodes] * isd[h.edge_nodes, None], ptr, axis=0)
    S_e = np.add.reduceat(isd[h.edge_nodes], ptr) ** 2
    e_of = h.edge_of_incidence
    nodes = h.edge_nodes
    proj = isd[nodes] * np.einsum("ij,ij->i", X[nodes], R[e_of]) / S_e[e_of]
    gap = np.maximum(1.0 - proj**2, epsilon_denominator)
    mu = -kappa * w / h.edge_size
    kp_node = mu[e_of] / (gap * S_e[e_of])
    kprime = np.add.reduceat(kp_node, ptr) / h.edge_size
    if per_node:
        return kprime, kp_node
    return kprime


def analytic_provider(cfg: DiffusionConfig, **curv_options) -> Callable:
    """K' provider for :func:`diffuse` that follows the attribute Ricci flow."""
    wcfg = WeightRuleConfig(epsilon=cfg.weight_epsilon)

    def provider(h, X, step):
        w = attribute_weight(h, X, wcfg)
        kappa = _curvature(h, w, cfg.curvature, **curv_options)
        return analytic_kprime(h, X, kappa, w, cfg.epsilon_denominator)

    return provider


def node_update_direction(h: Hypergraph, X, kprime, use_cosine: bool = True) -> np.ndarray:
    """Per-node update direction summed edge by edge."""
    return edge_direction(h.edge_ptr, h.edge_nodes, _isd(h), np.asarray(X, dtype=np.float64),
                          np.asarray(kprime, dtype=np.float64), bool(use_cosine))


def _s_matrix(h: Hypergraph, kprime) -> sp.csr_matrix:
    Dm = sp.diags(_isd(h))
    B = Dm @ h.incidence
    return (B @ sp.diags(np.asarray(kprime, dtype=np.float64)) @ B.T).tocsr()


def assemble_matrices(h: Hypergraph, X, kprime, use_cosine: bool = True):
    """Sparse ``S``, cosine matrix ``C`` and operator ``F``.

    ``C`` is only filled on node pairs that share a hyperedge (plus the
    diagonal).  ``F`` is returned as a sparse matrix, so ``F @ X`` applies it.
    """
    X = np.asarray(X, dtype=np.float64)
    S = _s_matrix(h, kprime)
    pattern = (h.incidence @ h.incidence.T).tocoo()
    r, c = pattern.row, pattern.col
    if use_cosine:
        U = X / np.linalg.norm(X, axis=1)[:, None]
        vals = np.einsum("ij,ij->i", U[r], U[c])
    else:
        vals = np.ones(r.size)
    C = sp.csr_matrix((vals, (r, c)), shape=(h.n, h.n))
    diag = np.asarray(S.multiply(C).sum(axis=1)).ravel()
    F = (sp.diags(diag) - S).tocsr()
    return S, C, F


def row_sums(h: Hypergraph, kprime) -> np.ndarray:
    """Row sums of ``S`` without forming it."""
    isd = _isd(h)
    edge_tot = np.add.reduceat(isd[h.edge_nodes], h.edge_ptr[:-1]) * np.asarray(kprime, dtype=np.float64)
    return isd * (h.incidence @ edge_tot)


def apply_operator(h: Hypergraph, X, kprime, use_cosine: bool = True) -> np.ndarray:
    """``F(X) X`` in O(incidences * d) via the factored form."""
    X = np.asarray(X, dtype=np.float64)
    kprime = np.asarray(kprime, dtype=np.float64)
    isd = _isd(h)
    H = h.incidence

    def S_apply(Y):
        Z = H.T @ (Y * isd[:, None])
        return (H @ (Z * kprime[:, None])) * isd[:, None]

    SX = S_apply(X)
    if use_cosine:
        norms = np.linalg.norm(X, axis=1)
        U = X / norms[:, None]
        diag = np.einsum("ij,ij->i", U, S_apply(U))
    else:
        diag = row_sums(h, kprime)
    return diag[:, None] * X - SX


def stability_bound(S, tau_used: Optional[float] = None) -> StabilityCertificate:
    """Step-size certificate ``tau <= 1 / max_i sum_j s_ij``.

    ``S`` may be the assembled matrix or a vector of its row sums.  When the
    largest row sum is not positive the certificate is marked inapplicable.
    """
    if sp.issparse(S):
        sums = np.asarray(S.sum(axis=1)).ravel()
    else:
        arr = np.asarray(S, dtype=np.float64)
        sums = arr.sum(axis=1) if arr.ndim == 2 else arr
    mx = float(sums.max())
    if mx <= 0:
        return StabilityCertificate(mx, None, tau_used, applicable=False)
    return StabilityCertificate(mx, 1.0 / mx, tau_used)


def euler_step(X, F_op, tau: float, renormalize: bool = True, step: Optional[int] = None) -> np.ndarray:
    """``X - tau * F_op(X)``; ``F_op`` is a matrix, sparse matrix or callable."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    X = np.asarray(X, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        FX = F_op(X) if callable(F_op) else F_op @ X
        out = X - tau * FX
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite features produced at step {step}")
    if renormalize:
        out = normalize_rows(out)
    return out


def rk4_step(X, rhs: Callable, tau: float) -> np.ndarray:
    """Classical fixed-step RK4 for ``dX/dt = -rhs(X)``; cross-check only."""
    k1 = -rhs(X)
    k2 = -rhs(X + 0.5 * tau * k1)
    k3 = -rhs(X + 0.5 * tau * k2)
    k4 = -rhs(X + tau * k3)
    return X + tau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class DiffusionResult:
    trajectory: list
    times: np.ndarray
    energy: np.ndarray
    certificates: list
    kprime: list
    weights: np.ndarray
    energy_report: Optional[EnergyReport] = None
    snapshots: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]


def diffuse(h: Hypergraph, X0, cfg: DiffusionConfig = DiffusionConfig(),
            kprime_provider: Optional[Callable] = None, force: bool = False,
            snapshot_steps: Sequence[int] = (), keep_trajectory: bool = True) -> DiffusionResult:
    """Run ``cfg.T`` Euler steps from ``X0``, recomputing ``K'``, ``S`` and ``C`` each step.

    Raises
    ------
    StabilityError
        If ``cfg.tau`` exceeds the step-0 certificate and ``force`` is false.
    DivergenceError
        On NaN/Inf or Frobenius norm growth beyond 1e6 times the start.
    """
    provider = kprime_provider or analytic_provider(cfg)
    X = normalize_rows(X0) if cfg.renormalize_each_step else np.asarray(X0, dtype=np.float64)
    norm0 = np.linalg.norm(X)
    wcfg = WeightRuleConfig(epsilon=cfg.weight_epsilon)
    traj = [X]
    energies = [dirichlet_energy(h, X)]
    weights = [attribute_weight(h, X, wcfg)]
    certs, kps = [], []
    snaps = {0: X.copy()} if 0 in snapshot_steps else {}
    for t in range(cfg.T):
        kp = np.asarray(provider(h, X, t), dtype=np.float64)
        cert = stability_bound(row_sums(h, kp), cfg.tau)
        if t == 0 and cert.applicable and not cert.stable and not force:
            raise StabilityError(
                f"tau={cfg.tau} exceeds the stability bound {cert.tau_bound:.6g} at step 0"
            )
        certs.append(cert)
        kps.append(kp)
        X = euler_step(X, lambda Y: apply_operator(h, Y, kp, cfg.use_cosine), cfg.tau,
                       renormalize=cfg.renormalize_each_step, step=t)
        if np.linalg.norm(X) > 1e6 * max(norm0, 1e-300):
            raise DivergenceError(f"feature norm grew beyond 1e6x at step {t}")
        if keep_trajectory:
            traj.append(X)
        else:
            traj[-1:] = [X]
        energies.append(dirichlet_energy(h, X))
        weights.append(attribute_weight(h, X, wcfg))
        if t + 1 in snapshot_steps:
            snaps[t + 1] = X.copy()
    times = cfg.tau * np.arange(cfg.T + 1)
    W = np.array(weights)
    report = None
    if cfg.T >= 2 and cfg.renormalize_each_step:
        report = energy_bounds(h, times, W, np.array(energies), cfg.weight_epsilon)
    return DiffusionResult(traj, times, np.array(energies), certs, kps, W, report, snaps)
