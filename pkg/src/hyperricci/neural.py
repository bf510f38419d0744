"""Learned-mode diffusion model, a mean-aggregation control, and training.

Pipeline of the diffusion model::

    X0 = normalize(Linear_enc(F))
    repeat T times:
        kprime = hypernet(X)                      # one scalar per hyperedge
        X = normalize(X - tau * F(X) X)
    logits = Linear_dec(X_T)

The hypernet pools member features per edge, maps them through ``theta1``,
pools back to nodes and again to edges, then maps through ``theta2`` to a
scalar.  Gradients flow through the whole unrolled loop via
:mod:`hyperricci.autodiff`.

The control model replaces the loop by ``X <- Theta X`` with the
degree-normalized mean-aggregation operator
``Theta = D_v^{-1/2} H D_e^{-1} H^T D_v^{-1/2}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .hypergraph import Hypergraph

__all__ = [
    "ABLATIONS",
    "DenseNet",
    "TrainConfig",
    "GraphOps",
    "Model",
    "TrainResult",
    "TrainingError",
    "GradCheckReport",
    "forward_learned_kprime",
    "unrolled_diffusion",
    "model_forward",
    "split_indices",
    "train",
    "gradient_check",
    "save_params",
    "load_params",
    "PARAMS_FORMAT",
    "PARAMS_VERSION",
]

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no-cos", "no-hypernet", "no-both")
PARAMS_FORMAT = "hyperricci-params"
PARAMS_VERSION = 1


class DenseNet:
    """Fully connected net; hidden layers use ``activation``, the output layer is linear.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output.
    rng : numpy Generator, optional
        Glorot-uniform initialization; zeros when omitted.
    activation : {"relu", "identity"}
    name : str
        Prefix of parameter names, ``"{name}.W{k}"`` and ``"{name}.b{k}"``.
    """

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None,
                 activation: str = "relu", name: str = "net"):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        self.name = name
        self.weights, self.biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                W = np.zeros((a, b))
            else:
                lim = np.sqrt(6.0 / (a + b))
                W = rng.uniform(-lim, lim, size=(a, b))
            self.weights.append(W)
            self.biases.append(np.zeros(b))

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{self.name}.W{k}", W))
            out.append((f"{self.name}.b{k}", b))
        return out

    def forward(self, x, leaves: dict) -> ad.Var:
        """Tape forward; ``leaves`` maps parameter names to tape variables."""
        depth = len(self.weights)
        for k in range(depth):
            x = ad.add(ad.matmul(x, leaves[f"{self.name}.W{k}"]), leaves[f"{self.name}.b{k}"])
            if k < depth - 1 and self.activation == "relu":
                x = ad.relu(x)
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        tape = ad.Tape()
        leaves = {k: tape.const(v) for k, v in self.named_parameters()}
        xin = tape.const(np.atleast_2d(x))
        if xin.shape[1] != self.sizes[0]:
            raise ValueError(f"{self.name}: expected input dim {self.sizes[0]}, got {xin.shape[1]}")
        return self.forward(xin, leaves).value


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and architecture settings.

    ``model`` is ``"diffusion"`` (learned curvature weights) or ``"mean"``
    (the mean-aggregation control).  ``layout`` chooses how the hypernet
    pools: ``"repool"`` (edge pool, theta1, node pool, edge pool) or
    ``"direct"`` (edge pool, theta1).
    """

    lr: float = 0.2
    weight_decay: float = 5e-4
    dropout: float = 0.0
    hidden: int = 32
    epochs: int = 200
    seed: int = 0
    split: tuple = (0.5, 0.25, 0.25)
    steps: int = 2
    tau: float = 0.05
    model: str = "diffusion"
    ablation: str = "none"
    hyper_hidden: int = 16
    renormalize: bool = True
    layout: str = "repool"

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3 or min(self.split) < 0:
            raise ValueError("split fractions must be three nonnegative numbers summing to 1")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ValueError("rates must be nonnegative and dropout < 1")
        if self.model not in ("diffusion", "mean"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.layout not in ("repool", "direct"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.steps < 0 or self.epochs < 0 or not self.tau > 0:
            raise ValueError("steps and epochs must be nonnegative, tau positive")

    @property
    def use_cosine(self) -> bool:
        return self.ablation in ("none", "no-hypernet")

    @property
    def use_hypernet(self) -> bool:
        return self.ablation in ("none", "no-cos")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


class GraphOps:
    """Sparse constants of one hypergraph used by the models."""

    def __init__(self, h: Hypergraph):
        self.h = h
        H = h.incidence.tocsr()
        isd = 1.0 / np.sqrt(h.node_degree.astype(np.float64))
        self.B = (sp.diags(isd) @ H).tocsr()                  # D^{-1/2} H
        self.BT = self.B.T.tocsr()
        self.edge_mean = (sp.diags(1.0 / h.edge_size) @ H.T).tocsr()
        self.node_mean = (sp.diags(1.0 / h.node_degree) @ H).tocsr()
        self.edge_isd_sum = np.asarray(self.BT @ np.ones(h.n))[:, None]
        self.theta = (self.B @ sp.diags(1.0 / h.edge_size) @ self.BT).tocsr()


def _learned_kprime(ops: GraphOps, X, theta1: DenseNet, theta2: DenseNet, leaves: dict,
                    layout: str = "repool") -> ad.Var:
    E_edge = ad.spmm(ops.edge_mean, X)
    Z = theta1.forward(E_edge, leaves)
    if layout == "repool":
        Z = ad.spmm(ops.edge_mean, ad.spmm(ops.node_mean, Z))
    return theta2.forward(Z, leaves)


def forward_learned_kprime(h: Hypergraph, X, nets: tuple, layout: str = "repool") -> np.ndarray:
    """Aggregation weights ``(m,)`` produced by the hypernet pair ``(theta1, theta2)``."""
    theta1, theta2 = nets
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != theta1.sizes[0] or theta1.sizes[-1] != theta2.sizes[0] or theta2.sizes[-1] != 1:
        raise ValueError(
            f"dimension mismatch: features {X.shape[1]}, theta1 {theta1.sizes}, theta2 {theta2.sizes}"
        )
    tape = ad.Tape()
    leaves = {k: tape.const(v) for net in nets for k, v in net.named_parameters()}
    out = _learned_kprime(GraphOps(h), tape.const(X), theta1, theta2, leaves, layout)
    return out.value[:, 0].copy()


def _apply_F(ops: GraphOps, X, kp, use_cosine: bool):
    def S_apply(Y):
        return ad.spmm(ops.B, ad.mul(ad.spmm(ops.BT, Y), kp))

    SX = S_apply(X)
    if use_cosine:
        U = ad.normalize_rows(X)
        diag = ad.rowdot(U, S_apply(U))
    else:
        diag = ad.spmm(ops.B, ad.mul(kp, ops.edge_isd_sum))
    return ad.sub(ad.mul(diag, X), SX)


def unrolled_diffusion(ops: GraphOps, X, steps: int, tau: float, kprime_fn: Callable,
                       use_cosine: bool = True, renormalize: bool = True) -> list:
    """Differentiable Euler loop; ``kprime_fn(X, t)`` returns an ``(m, 1)`` Var or array."""
    traj = [X]
    for t in range(steps):
        kp = kprime_fn(X, t)
        if not isinstance(kp, ad.Var):
            kp = X.tape.const(np.asarray(kp, dtype=np.float64).reshape(-1, 1))
        X = ad.sub(X, ad.scale(_apply_F(ops, X, kp, use_cosine), tau))
        if renormalize:
            X = ad.normalize_rows(X)
        traj.append(X)
    return traj


class Model:
    """Parameters and structure of either model kind."""

    def __init__(self, n_features: int, n_classes: int, cfg: TrainConfig,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.n_features = n_features
        self.n_classes = n_classes
        self.encoder = DenseNet([n_features, cfg.hidden], rng, "identity", "enc")
        self.decoder = DenseNet([cfg.hidden, n_classes], rng, "identity", "dec")
        self.theta1 = DenseNet([cfg.hidden, cfg.hyper_hidden, cfg.hidden], rng, "relu", "theta1")
        self.theta2 = DenseNet([cfg.hidden, cfg.hyper_hidden, 1], rng, "relu", "theta2")
        # fixed random weights for the hypernet ablation
        self.kprime_seed = int(rng.integers(2**31))

    def nets(self) -> list[DenseNet]:
        out = [self.encoder, self.decoder]
        if self.cfg.model == "diffusion" and self.cfg.use_hypernet:
            out += [self.theta1, self.theta2]
        return out

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for net in self.nets() for k, v in net.named_parameters()}

    def random_kprime(self, m: int) -> np.ndarray:
        return np.random.default_rng(self.kprime_seed).uniform(0.0, 1.0, size=m)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params().items():
            if k not in state:
                raise KeyError(f"missing parameter {k!r}")
            if state[k].shape != v.shape:
                raise ValueError(f"parameter {k!r}: shape {state[k].shape} != {v.shape}")
            v[...] = state[k]


def _forward(model: Model, ops: GraphOps, F, leaves: dict, kprime_override: Optional[Callable] = None):
    """Returns ``(logits, embeddings)`` on the tape of ``F``."""
    cfg = model.cfg
    X = model.encoder.forward(F, leaves)
    if cfg.model == "mean":
        traj = [X]
        for _ in range(cfg.steps):
            X = ad.spmm(ops.theta, X)
            traj.append(X)
    else:
        X = ad.normalize_rows(X)
        if kprime_override is not None:
            kfn = kprime_override
        elif cfg.use_hypernet:
            def kfn(Y, t):
                return _learned_kprime(ops, Y, model.theta1, model.theta2, leaves, cfg.layout)
        else:
            fixed = model.random_kprime(ops.h.m)

            def kfn(Y, t):
                return fixed
        traj = unrolled_diffusion(ops, X, cfg.steps, cfg.tau, kfn, cfg.use_cosine, cfg.renormalize)
    return model.decoder.forward(traj[-1], leaves), traj


def model_forward(h: Hypergraph, F_raw, model: Model, ops: Optional[GraphOps] = None,
                  kprime_override: Optional[Callable] = None, return_embeddings: bool = False):
    """Class logits (and optionally the embedding trajectory) in evaluation mode."""
    ops = ops or GraphOps(h)
    tape = ad.Tape()
    leaves = {k: tape.const(v) for k, v in model.params().items()}
    logits, traj = _forward(model, ops, tape.const(F_raw), leaves, kprime_override)
    if not np.all(np.isfinite(logits.value)):
        raise FloatingPointError("non-finite logits")
    if return_embeddings:
        return logits.value, [x.value for x in traj]
    return logits.value


def split_indices(n: int, fractions, rng: np.random.Generator) -> tuple:
    perm = rng.permutation(n)
    n_tr = int(round(fractions[0] * n))
    n_va = int(round(fractions[1] * n))
    return perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    """Outcome of :func:`train`.

    ``history`` holds ``epochs + 1`` entries per metric; entry 0 scores the
    initial parameters, so the best-epoch selection can return them.
    """

    model: Model
    history: dict
    best_epoch: int
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    split: tuple = field(repr=False, default=())

    def metrics(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "history": self.history,
            "config": self.model.cfg.to_dict(),
        }


def _accuracy(logits: np.ndarray, labels: np.ndarray, idx) -> float:
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


def train(h: Hypergraph, F_raw, labels, cfg: TrainConfig = TrainConfig(),
          split: Optional[tuple] = None) -> TrainResult:
    """Full-batch gradient descent with weight decay on the training split.

    Returns the parameters that scored best on validation (earliest epoch on
    ties) together with per-epoch loss and accuracies.

    Raises
    ------
    TrainingError
        On a non-finite loss (the epoch is reported) or a degenerate split.
    """
    F_raw = np.asarray(F_raw, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if F_raw.shape[0] != h.n or labels.shape != (h.n,):
        raise ValueError("features and labels must have one row per node")
    rng = np.random.default_rng(cfg.seed)
    n_classes = int(labels.max()) + 1
    model = Model(F_raw.shape[1], n_classes, cfg, rng)
    tr, va, te = split if split is not None else split_indices(h.n, cfg.split, rng)
    tr, va, te = (np.asarray(s, dtype=np.int64) for s in (tr, va, te))
    if tr.size == 0 or np.unique(labels[tr]).size < 2:
        raise TrainingError("training split must contain at least two classes")
    ops = GraphOps(h)
    params = model.params()
    history = {"loss": [], "train_accuracy": [], "val_accuracy": [], "test_accuracy": []}
    best = (-1.0, -1, None)
    keep = 1.0 - cfg.dropout

    def evaluate(logits, epoch):
        nonlocal best
        accs = [_accuracy(logits, labels, s) for s in (tr, va, te)]
        for key, a in zip(("train_accuracy", "val_accuracy", "test_accuracy"), accs):
            history[key].append(a)
        score = accs[1] if va.size else accs[0]
        if score > best[0]:
            best = (score, epoch, {k: v.copy() for k, v in params.items()}, accs)

    for epoch in range(cfg.epochs + 1):
        tape = ad.Tape()
        leaves = {k: tape.var(v, name=k) for k, v in params.items()}
        if cfg.dropout > 0:
            mask = (rng.random(F_raw.shape) < keep) / keep
            Fin = tape.const(F_raw * mask)
        else:
            Fin = tape.const(F_raw)
        logits, _ = _forward(model, ops, Fin, leaves)
        loss = ad.cross_entropy(logits, labels, tr)
        lval = float(loss.value)
        if not np.isfinite(lval):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        if cfg.dropout > 0:
            evaluate(model_forward(h, F_raw, model, ops), epoch)
        else:
            evaluate(logits.value, epoch)
        history["loss"].append(lval)
        if epoch == cfg.epochs:
            break
        tape.backward(loss)
        for k, v in params.items():
            g = leaves[k].grad
            if g is None:
                g = 0.0
            v -= cfg.lr * (g + cfg.weight_decay * v)
    _, best_epoch, state, accs = best
    model.load_state(state)
    return TrainResult(model, history, best_epoch, accs[0], accs[1], accs[2], (tr, va, te))


@dataclass
class GradCheckReport:
    max_rel_error: float
    probes: list
    resampled: int

    def to_dict(self) -> dict:
        return asdict(self)


def _relu_signature(tape: ad.Tape) -> bytes:
    return b"".join(np.packbits(m).tobytes() for m in tape.relu_masks)


def gradient_check(params: dict, loss_fn: Callable, probes: int = 64, step: float = 1e-5,
                   seed: int = 0, floor: float = 1e-6, max_resample: int = 1000) -> GradCheckReport:
    """Compare tape gradients with central differences on sampled coordinates.

    Parameters
    ----------
    params : dict of name -> array
        Point of evaluation; left unchanged.
    loss_fn : callable
        ``loss_fn(tape, leaves) -> scalar Var`` where ``leaves`` maps names to tape variables.
    probes : int
        Coordinates are drawn round-robin over the parameter tensors.
    floor : float
        Lower bound of the relative-error denominator ``max(|g|, |g_fd|, floor)``.

    Notes
    -----
    A probe whose ``+step``/``-step`` evaluations change the on/off pattern of
    any ReLU straddles a kink, where the derivative is undefined; it is
    redrawn instead of being scored.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = ad.Tape()
    leaves = {k: tape.var(v, name=k) for k, v in base.items()}
    tape.backward(loss_fn(tape, leaves))
    grads = {k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(v)) for k, v in base.items()}

    def evaluate(name, idx, delta):
        p = {k: v.copy() for k, v in base.items()}
        p[name][idx] += delta
        t = ad.Tape()
        lv = {k: t.const(v) for k, v in p.items()}
        return float(loss_fn(t, lv).value), _relu_signature(t)

    names = list(base)
    results, resampled, worst = [], 0, 0.0
    for k in range(probes):
        name = names[k % len(names)]
        for _ in range(max_resample):
            idx = tuple(int(rng.integers(s)) for s in base[name].shape)
            fp, sp_ = evaluate(name, idx, step)
            fm, sm = evaluate(name, idx, -step)
            if sp_ == sm:
                break
            resampled += 1
        else:
            raise RuntimeError(f"could not find a kink-free coordinate in {name!r}")
        fd = (fp - fm) / (2 * step)
        g = float(grads[name][idx])
        rel = abs(g - fd) / max(abs(g), abs(fd), floor)
        worst = max(worst, rel)
        results.append({"param": name, "index": list(idx), "tape": g, "fd": fd, "rel_error": rel})
    return GradCheckReport(worst, results, resampled)


def save_params(model: Model, path) -> None:
    """Write parameters as ``.npz``: one array per parameter plus format, version and config keys."""
    arrays = dict(model.params())
    arrays["__format__"] = np.array(PARAMS_FORMAT)
    arrays["__version__"] = np.array(PARAMS_VERSION)
    arrays["__config__"] = np.array(json.dumps({
        "train": model.cfg.to_dict(),
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "kprime_seed": model.kprime_seed,
    }))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> Model:
    with np.load(path, allow_pickle=False) as z:
        if "__format__" not in z or str(z["__format__"]) != PARAMS_FORMAT:
            raise ValueError(f"{path}: not a params snapshot")
        version = int(z["__version__"])
        if version != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported params version {version}")
        meta = json.loads(str(z["__config__"]))
        state = {k: z[k] for k in z.files if not k.startswith("__")}
    tcfg = meta["train"]
    tcfg["split"] = tuple(tcfg["split"])
    model = Model(meta["n_features"], meta["n_classes"], TrainConfig(**tcfg))
    model.kprime_seed = meta["kprime_seed"]
    model.load_state(state)
    return model
