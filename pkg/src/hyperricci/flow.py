"""Discrete Ricci flow on hyperedge weights, attribute-coupled weights,
Dirichlet energy and the energy/convergence certificates built on them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .curvature import curvature
from .hypergraph import Hypergraph

__all__ = [
    "WeightRuleConfig",
    "EnergyReport",
    "ConvergenceReport",
    "edge_constants",
    "attribute_weight",
    "weight_flow_step",
    "FlowStepError",
    "dirichlet_energy",
    "energy_from_weights",
    "energy_bounds",
    "monotone_segments",
    "convergence_monitor",
    "convergence_bound",
    "run_weight_flow",
]

PAIR_CONVENTIONS = ("ordered", "unordered")

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightRuleConfig:
    epsilon: float = 1e-3
    pair_convention: str = "ordered"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.pair_convention not in PAIR_CONVENTIONS:
            raise ValueError(f"pair_convention must be one of {PAIR_CONVENTIONS}")


def edge_constants(h: Hypergraph, epsilon: float = 1e-3) -> dict[str, np.ndarray]:
    """Per-edge constants of the energy/weight identity.

    Returns ``alpha`` (mean of 1/sqrt(d_i d_j) over ordered pairs), ``A``
    (``sum_{i in e} 1/d_i``, equal to the ordered-pair average of
    ``(1/d_i + 1/d_j) / 2`` times ``|e|``), ``S`` (``sum_{i,j in e} 1/sqrt(d_i d_j)``)
    and ``c = A + (1 + epsilon) * alpha``.
    """
    d = h.node_degree.astype(np.float64)
    isd = 1.0 / np.sqrt(d)
    root = np.add.reduceat(isd[h.edge_nodes], h.edge_ptr[:-1])
    S = root**2
    alpha = S / h.edge_size
    A = np.add.reduceat(1.0 / d[h.edge_nodes], h.edge_ptr[:-1])
    return {"alpha": alpha, "A": A, "S": S, "c": A + (1.0 + epsilon) * alpha}


def attribute_weight(h: Hypergraph, X, cfg: WeightRuleConfig = WeightRuleConfig()) -> np.ndarray:
    """Hyperedge weights from member features.

    ``w_e = (1/alpha_e) (1/|e|) sum_{i,j in e} cos(x_i, x_j) / sqrt(d_i d_j) + 1 + eps``.
    Under the default ordered convention the sum runs over all ordered pairs
    including ``i == j``; ``"unordered"`` uses pairs ``i < j`` for both the
    numerator and ``alpha_e``.
    """
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    U = X / norms[:, None]
    isd = 1.0 / np.sqrt(h.node_degree.astype(np.float64))
    Y = U * isd[:, None]
    seg = np.add.reduceat(Y[h.edge_nodes], h.edge_ptr[:-1], axis=0)
    ordered_num = np.einsum("ij,ij->i", seg, seg)
    ordered_den = np.add.reduceat(isd[h.edge_nodes], h.edge_ptr[:-1]) ** 2
    if cfg.pair_convention == "ordered":
        num, den = ordered_num, ordered_den
    else:
        diag_num = np.add.reduceat(np.einsum("ij,ij->i", Y, Y)[h.edge_nodes], h.edge_ptr[:-1])
        diag_den = np.add.reduceat((isd**2)[h.edge_nodes], h.edge_ptr[:-1])
        num = 0.5 * (ordered_num - diag_num)
        den = 0.5 * (ordered_den - diag_den)
    # 1/|e| cancels between numerator and alpha_e
    return num / den + 1.0 + cfg.epsilon


class FlowStepError(ValueError):
    pass


def weight_flow_step(w, kappa, dt: float) -> np.ndarray:
    """One explicit step of ``dw_e/dt = -kappa_e w_e``.

    Raises
    ------
    FlowStepError
        If a weight would become nonpositive; the message names the edge and
        the largest admissible ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = np.asarray(w, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    factor = 1.0 - dt * kappa
    bad = np.flatnonzero(factor <= 0)
    if bad.size:
        e = int(bad[0])
        dt_max = 1.0 / float(kappa[kappa > 0].max())
        raise FlowStepError(f"step would make weight of edge {e} nonpositive; need dt < {dt_max:.6g}")
    return w * factor


def dirichlet_energy(h: Hypergraph, X) -> float:
    """``1/2 sum_e sum_{i,j in e} (1/|e|) ||x_i/sqrt(d_i) - x_j/sqrt(d_j)||^2``.

    Evaluated as ``sum_e [ sum_{i in e} ||y_i||^2 - ||sum_{i in e} y_i||^2 / |e| ]``
    with ``y_i = x_i / sqrt(d_i)``, which is the same sum without forming pairs.
    """
    X = np.asarray(X, dtype=np.float64)
    isd = 1.0 / np.sqrt(h.node_degree.astype(np.float64))
    Y = X * isd[:, None]
    seg = np.add.reduceat(Y[h.edge_nodes], h.edge_ptr[:-1], axis=0)
    sq = np.add.reduceat(np.einsum("ij,ij->i", Y, Y)[h.edge_nodes], h.edge_ptr[:-1])
    return float(np.sum(sq - np.einsum("ij,ij->i", seg, seg) / h.edge_size))


def energy_from_weights(h: Hypergraph, w, epsilon: float) -> float:
    """Energy through the weight identity ``sum_e (c_e - alpha_e w_e)`` (unit-norm rows)."""
    k = edge_constants(h, epsilon)
    return float(np.sum(k["c"] - k["alpha"] * np.asarray(w)))


def monotone_segments(times, values, deadband: float = 1e-10) -> list[float]:
    """Lengths of the maximal monotone pieces of a sampled trace.

    Extrema are the sample points where the sign of the first difference
    flips; differences with magnitude ``<= deadband`` carry no sign.
    """
    times = np.asarray(times, dtype=np.float64)
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    cuts = [times[0]]
    last = 0
    for k, dv in enumerate(diffs):
        s = 0 if abs(dv) <= deadband else (1 if dv > 0 else -1)
        if s == 0:
            continue
        if last != 0 and s != last:
            cuts.append(times[k])
        last = s
    cuts.append(times[-1])
    return list(np.diff(cuts))


@dataclass
class EnergyReport:
    times: list
    energy: list
    mean_energy: float
    B1: float
    B2: float
    form: str
    B1_general: float
    B2_general: float
    B1_main: Optional[float]
    B2_main: float
    B1_pointwise: float
    B2_pointwise: float
    regular: bool
    rho: list
    zeta: list
    c: list
    alpha: list
    epsilon: float
    approximate: bool = True

    @property
    def within(self) -> bool:
        return self.B2 <= self.mean_energy <= self.B1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["within"] = bool(self.within)
        return out


def _trapezoid_mean(t, y) -> float:
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)) / (t[-1] - t[0]))


def energy_bounds(h: Hypergraph, times, weight_traj, energy_traj, epsilon: float) -> EnergyReport:
    """Certificate on the time-averaged Dirichlet energy of an attribute flow.

    Parameters
    ----------
    times : (T,) array
        Uniform sample grid, at least 3 points.
    weight_traj : (T, m) array
        Edge weights at each sample.
    energy_traj : (T,) array
        Dirichlet energy at each sample.
    epsilon : float
        Weight floor used by the weight rule.

    Notes
    -----
    When every weight trace is monotone on the window the tighter closed form
    (``form == "monotone"``) is used, otherwise the general bound with the
    per-edge ratio ``rho_e`` and shortest monotone piece ``zeta_e``.  The
    general form rests on a mean-value approximation and is flagged as
    approximate, so in that case the reported ``B1``/``B2`` are clipped by
    the pointwise bounds ``sum_e (A_e -/+ alpha_e)``, which follow from
    ``eps <= w_e <= 2 + eps`` at every instant and need no monotonicity.
    """
    times = np.asarray(times, dtype=np.float64)
    W = np.asarray(weight_traj, dtype=np.float64)
    E = np.asarray(energy_traj, dtype=np.float64)
    if times.size < 3:
        raise ValueError("energy window needs at least 3 samples")
    if W.shape != (times.size, h.m) or E.shape != times.shape:
        raise ValueError("trajectory shapes do not match the time grid")
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be strictly increasing and uniform")
    span = times[-1] - times[0]
    k = edge_constants(h, epsilon)
    c, alpha, A = k["c"], k["alpha"], k["A"]
    rho = W.max(axis=0) / W.min(axis=0)
    zeta = np.array([min(monotone_segments(times, W[:, e])) for e in range(h.m)])
    monotone = bool(np.all(np.isclose(zeta, span, rtol=1e-12)))
    B1_general = float(span * np.sum(c * rho / zeta) - np.sum(alpha * epsilon * rho))
    B2_general = float(np.sum(c - (2.0 + epsilon) * alpha * span / zeta))
    B2_main = float(np.sum(A) - np.sum(alpha))
    B1_main = float(rho.max() * (np.sum(A) + np.sum(alpha))) if monotone else None
    B1_point = float(np.sum(A) + np.sum(alpha))
    B2_point = float(np.sum(A) - np.sum(alpha))
    deg = h.node_degree
    return EnergyReport(
        times=times.tolist(),
        energy=E.tolist(),
        mean_energy=_trapezoid_mean(times, E),
        B1=B1_main if monotone else min(B1_general, B1_point),
        B2=B2_main if monotone else max(B2_general, B2_point),
        form="monotone" if monotone else "general",
        B1_general=B1_general,
        B2_general=B2_general,
        B1_main=B1_main,
        B2_main=B2_main,
        B1_pointwise=B1_point,
        B2_pointwise=B2_point,
        regular=bool(np.all(deg == deg[0])),
        rho=rho.tolist(),
        zeta=zeta.tolist(),
        c=c.tolist(),
        alpha=alpha.tolist(),
        epsilon=float(epsilon),
        approximate=not monotone,
    )


def convergence_bound(L: float, epsilon: float, delta: float) -> Optional[float]:
    """Upper bound on the first time ``|kappa_e| = delta``; ``None`` when ``L eps <= delta``."""
    if L * epsilon <= delta:
        return None
    return math.log((2.0 * L + delta) / (delta * (2.0 + epsilon))) / (L * epsilon - delta)


@dataclass
class ConvergenceReport:
    delta: float
    times: list
    abs_kappa: list            # (T, m) nested list
    hit_time: list             # per edge, None if never reached
    L: Optional[float]
    L_estimated: bool
    bound: Optional[float]
    bound_applicable: bool
    hypothesis_holds: Optional[bool]
    max_abs_kappa: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _estimate_L(kappa_traj, weight_traj) -> Optional[float]:
    dk = np.abs(np.diff(kappa_traj, axis=0))
    dw = np.abs(np.diff(weight_traj, axis=0))
    mask = dw > 1e-14
    if not np.any(mask):
        return None
    return float(np.min(dk[mask] / dw[mask]))


def convergence_monitor(times, kappa_traj, delta: float, weight_traj=None,
                        L: Optional[float] = None, epsilon: float = 1e-3) -> ConvergenceReport:
    """First time each ``|kappa_e(t)|`` drops to ``delta`` and the matching bound.

    Hit times are linearly interpolated between samples.  Without a given
    ``L`` the largest constant compatible with ``|dk| >= L |dw|`` on every
    pair of consecutive samples is used (needs ``weight_traj``).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    times = np.asarray(times, dtype=np.float64)
    K = np.abs(np.asarray(kappa_traj, dtype=np.float64))
    if K.ndim == 1:
        K = K[:, None]
    if not np.all(np.isfinite(K)):
        raise ValueError("curvature trajectory contains non-finite values")
    hits: list = []
    for e in range(K.shape[1]):
        col = K[:, e]
        below = np.flatnonzero(col <= delta)
        if below.size == 0:
            hits.append(None)
            continue
        s = int(below[0])
        if s == 0:
            hits.append(float(times[0]))
            continue
        k0, k1 = col[s - 1], col[s]
        frac = (k0 - delta) / (k0 - k1)
        hits.append(float(times[s - 1] + frac * (times[s] - times[s - 1])))
    estimated = False
    hypothesis = None
    if L is None and weight_traj is not None:
        L = _estimate_L(np.asarray(kappa_traj, dtype=np.float64).reshape(K.shape),
                        np.asarray(weight_traj, dtype=np.float64).reshape(K.shape))
        estimated = True
    if L is not None and weight_traj is not None:
        kt = np.asarray(kappa_traj, dtype=np.float64).reshape(K.shape)
        wt = np.asarray(weight_traj, dtype=np.float64).reshape(K.shape)
        hypothesis = bool(np.all(np.abs(np.diff(kt, axis=0)) >= L * np.abs(np.diff(wt, axis=0)) - 1e-12))
        hypothesis = hypothesis and L > 0
    bound = convergence_bound(L, epsilon, delta) if L is not None else None
    return ConvergenceReport(
        delta=float(delta),
        times=times.tolist(),
        abs_kappa=K.tolist(),
        hit_time=hits,
        L=L,
        L_estimated=estimated,
        bound=bound,
        bound_applicable=bound is not None,
        hypothesis_holds=hypothesis,
        max_abs_kappa=K.max(axis=1).tolist(),
    )


def run_weight_flow(h: Hypergraph, w0, dt: float, steps: int, kind: str = "forman",
                    stop_below: Optional[float] = None, max_weight: float = 1e12, **curv_options):
    """Integrate the pure weight flow, recomputing curvature every step.

    Returns ``(times, weights, kappas)`` with ``steps + 1`` rows, fewer when
    ``stop_below`` is reached or a weight leaves ``(0, max_weight]``.  A step
    rejected by the positivity guard raises :class:`FlowStepError`.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    ws, ks = [w.copy()], [curvature(h, w, kind, **curv_options)]
    for step in range(steps):
        if stop_below is not None and np.max(np.abs(ks[-1])) < stop_below:
            break
        with np.errstate(over="ignore"):
            w = weight_flow_step(w, ks[-1], dt)
        if not np.all(np.isfinite(w)) or w.max() > max_weight:
            log.warning("weight flow diverged at step %d (max weight %.3g)", step + 1, w.max())
            break
        ws.append(w.copy())
        ks.append(curvature(h, w, kind, **curv_options))
    times = dt * np.arange(len(ws))
    return times, np.array(ws), np.array(ks)
