"""Experiment suites: over-smoothing, noise robustness and per-step cost.

Each suite writes a CSV with a header row and a ``<name>.meta.json``
sidecar (git revision, configuration, seed, compiled backend).  Finished
sub-runs are appended to ``<name>.partial.jsonl`` so an interrupted suite
resumes where it stopped.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .diffusion import DiffusionConfig, analytic_provider, apply_operator
from .flow import dirichlet_energy
from .hypergraph import Hypergraph, normalize_rows
from .kernels import BACKEND
from .neural import TrainConfig, model_forward, train
from .synthgen import NOISE_KINDS, NoiseConfig, SbmConfig, apply_noise, generate_sbm

__all__ = [
    "DEPTHS",
    "NOISE_RATES",
    "COMPLEXITY_SIZES",
    "OversmoothConfig",
    "RobustnessConfig",
    "ComplexityConfig",
    "run_oversmooth_suite",
    "run_robustness_suite",
    "run_complexity_probe",
    "loglog_slope",
    "random_hypergraph",
    "write_csv",
    "git_revision",
]

log = logging.getLogger(__name__)

DEPTHS = (2, 4, 10, 20, 30, 40)
NOISE_RATES = (0.1, 0.2, 0.3, 0.4)
COMPLEXITY_SIZES = (250, 500, 1000, 2000, 4000)
SMALL_SBM = SbmConfig(n_per_class=500, edges=200, edge_size=15)


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_csv(path, rows: Sequence[dict], columns: Sequence[str], config: dict, seed) -> str:
    """Write ``rows`` under a header and the metadata sidecar; returns the sidecar path."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    meta = {
        "git": git_revision(),
        "package_version": __version__,
        "backend": BACKEND,
        "seed": seed,
        "config": _jsonable(config),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    side = os.path.splitext(path)[0] + ".meta.json"
    with open(side, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return side


class _Checkpoint:
    def __init__(self, path: Optional[str]):
        self.path = path
        self.done: dict[str, dict] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self.done[rec["key"]] = rec["row"]

    def add(self, key: str, row: dict) -> None:
        self.done[key] = row
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "row": _jsonable(row)}) + "\n")


def _run_jobs(jobs: list, fn: Callable, ckpt: _Checkpoint, workers: int = 1) -> list:
    """Evaluate ``fn(job)`` for jobs not yet in the checkpoint; returns rows in job order."""
    todo = [j for j in jobs if j["key"] not in ckpt.done]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for job, row in zip(todo, pool.map(fn, todo)):
                ckpt.add(job["key"], row)
    else:
        for job in todo:
            try:
                row = fn(job)
            except Exception as exc:
                raise RuntimeError(f"sub-run {job['key']} failed: {exc}") from exc
            ckpt.add(job["key"], row)
            log.info("finished %s", job["key"])
    return [ckpt.done[j["key"]] for j in jobs]


# ---------------------------------------------------------------- over-smoothing

@dataclass
class OversmoothConfig:
    sbm: SbmConfig = field(default_factory=lambda: replace(SMALL_SBM, alpha=2))
    train: TrainConfig = field(default_factory=TrainConfig)
    depths: tuple = DEPTHS
    seeds: tuple = (0,)
    models: tuple = ("diffusion", "mean")

    def to_dict(self) -> dict:
        return {"sbm": self.sbm.to_dict(), "train": self.train.to_dict(), "depths": list(self.depths),
                "seeds": list(self.seeds), "models": list(self.models)}


def _oversmooth_job(job: dict) -> dict:
    sbm = SbmConfig(**{**job["sbm"], "seed": job["seed"]})
    ds = generate_sbm(sbm)
    if job["depth"] == 0:
        return {"model": "input", "depth": 0, "seed": job["seed"], "accuracy": "",
                "dirichlet_energy": dirichlet_energy(ds.hypergraph, ds.features)}
    tcfg = TrainConfig(**{**job["train"], "split": tuple(job["train"]["split"]), "model": job["model"],
                          "steps": job["depth"], "seed": job["seed"]})
    res = train(ds.hypergraph, ds.features, ds.labels, tcfg)
    _, traj = model_forward(ds.hypergraph, ds.features, res.model, return_embeddings=True)
    return {"model": job["model"], "depth": job["depth"], "seed": job["seed"],
            "accuracy": res.test_accuracy, "dirichlet_energy": dirichlet_energy(ds.hypergraph, traj[-1])}


def run_oversmooth_suite(cfg: OversmoothConfig = OversmoothConfig(), out_dir: Optional[str] = None,
                         workers: int = 1) -> list[dict]:
    """Test accuracy and terminal Dirichlet energy against depth for both models.

    A ``depth == 0`` row per seed holds the energy of the raw input features.
    """
    base = {"sbm": cfg.sbm.to_dict(), "train": cfg.train.to_dict()}
    jobs = []
    for seed in cfg.seeds:
        jobs.append({**base, "key": f"input/0/{seed}", "model": "input", "depth": 0, "seed": seed})
        for model in cfg.models:
            for depth in cfg.depths:
                jobs.append({**base, "key": f"{model}/{depth}/{seed}", "model": model,
                             "depth": depth, "seed": seed})
    ckpt = _Checkpoint(os.path.join(out_dir, "oversmooth.partial.jsonl") if out_dir else None)
    rows = _run_jobs(jobs, _oversmooth_job, ckpt, workers)
    if out_dir:
        write_csv(os.path.join(out_dir, "oversmooth.csv"), rows,
                  ["model", "depth", "seed", "accuracy", "dirichlet_energy"], cfg.to_dict(), list(cfg.seeds))
    return rows


# ---------------------------------------------------------------- robustness

@dataclass
class RobustnessConfig:
    sbm: SbmConfig = field(default_factory=lambda: replace(SMALL_SBM, alpha=2))
    train: TrainConfig = field(default_factory=TrainConfig)
    kinds: tuple = NOISE_KINDS
    rates: tuple = NOISE_RATES
    seeds: tuple = (0, 1, 2, 3, 4)
    models: tuple = ("diffusion", "mean")
    include_clean: bool = True

    def to_dict(self) -> dict:
        return {"sbm": self.sbm.to_dict(), "train": self.train.to_dict(), "kinds": list(self.kinds),
                "rates": list(self.rates), "seeds": list(self.seeds), "models": list(self.models),
                "include_clean": self.include_clean}


def _robustness_job(job: dict) -> dict:
    ds = generate_sbm(SbmConfig(**{**job["sbm"], "seed": job["seed"]}))
    if job["rate"] > 0:
        ds = apply_noise(ds, NoiseConfig(kind=job["kind"], rate=job["rate"], seed=job["seed"]))
    tcfg = TrainConfig(**{**job["train"], "split": tuple(job["train"]["split"]),
                          "model": job["model"], "seed": job["seed"]})
    res = train(ds.hypergraph, ds.features, ds.labels, tcfg)
    return {"model": job["model"], "noise_kind": job["kind"], "rate": job["rate"],
            "seed": job["seed"], "accuracy": res.test_accuracy}


def summarize(rows: Sequence[dict], keys: Sequence[str], value: str = "accuracy") -> list[dict]:
    """Mean and standard deviation of ``value`` grouped by ``keys`` (first-seen order)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(float(r[value]))
    out = []
    for k, vals in groups.items():
        row = dict(zip(keys, k))
        row.update({"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)})
        out.append(row)
    return out


def run_robustness_suite(cfg: RobustnessConfig = RobustnessConfig(), out_dir: Optional[str] = None,
                         workers: int = 1) -> list[dict]:
    """Accuracy under each noise kind and rate; ``rate == 0`` rows are the clean reference."""
    base = {"sbm": cfg.sbm.to_dict(), "train": cfg.train.to_dict()}
    rates = ((0.0,) if cfg.include_clean else ()) + tuple(cfg.rates)
    jobs = []
    for model in cfg.models:
        for kind in cfg.kinds:
            for rate in rates:
                for seed in cfg.seeds:
                    jobs.append({**base, "key": f"{model}/{kind}/{rate}/{seed}", "model": model,
                                 "kind": kind, "rate": rate, "seed": seed})
    ckpt = _Checkpoint(os.path.join(out_dir, "robustness.partial.jsonl") if out_dir else None)
    rows = _run_jobs(jobs, _robustness_job, ckpt, workers)
    if out_dir:
        write_csv(os.path.join(out_dir, "robustness.csv"), rows,
                  ["model", "noise_kind", "rate", "seed", "accuracy"], cfg.to_dict(), list(cfg.seeds))
        write_csv(os.path.join(out_dir, "robustness_summary.csv"),
                  summarize(rows, ["model", "noise_kind", "rate"]),
                  ["model", "noise_kind", "rate", "mean", "std", "n"], cfg.to_dict(), list(cfg.seeds))
    return rows


# ---------------------------------------------------------------- cost probe

@dataclass
class ComplexityConfig:
    sizes: tuple = COMPLEXITY_SIZES
    edge_size: int = 5
    nodes_per_edge: float = 1.0
    feature_dim: int = 16
    repeats: int = 7
    curvature: str = "forman"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def random_hypergraph(n: int, m: int, r: int, rng: np.random.Generator) -> Hypergraph:
    """``m`` edges of size ``r`` on ``n`` nodes; nodes are dealt from reshuffled decks so none is isolated."""
    if m * r < n:
        raise ValueError("m * r must be at least n to cover every node")
    deck: list = []
    edges = []
    for _ in range(m):
        e: list = []
        while len(e) < r:
            if not deck:
                deck = list(rng.permutation(n))
            v = int(deck.pop())
            if v not in e:
                e.append(v)
        edges.append(e)
    return Hypergraph(n, edges)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def time_step(h: Hypergraph, X: np.ndarray, cfg: DiffusionConfig, repeats: int) -> float:
    """Median wall time of one full analytic step (weights, curvature, K', update, renormalize)."""
    provider = analytic_provider(cfg)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        kp = provider(h, X, 0)
        Y = X - cfg.tau * apply_operator(h, X, kp, cfg.use_cosine)
        normalize_rows(Y)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_complexity_probe(cfg: ComplexityConfig = ComplexityConfig(), out_dir: Optional[str] = None,
                         dims: Sequence[int] = ()) -> dict:
    """Per-step wall time against ``m`` (bounded edge size) and, optionally, feature dimension."""
    rng = np.random.default_rng(cfg.seed)
    dcfg = DiffusionConfig(curvature=cfg.curvature)
    rows = []
    for m in cfg.sizes:
        n = max(cfg.edge_size, int(round(cfg.nodes_per_edge * m)))
        h = random_hypergraph(n, m, cfg.edge_size, rng)
        X = normalize_rows(rng.standard_normal((n, cfg.feature_dim)))
        rows.append({"m": m, "n": n, "d": cfg.feature_dim,
                     "wall_time": time_step(h, X, dcfg, cfg.repeats)})
    slope = loglog_slope([r["m"] for r in rows], [r["wall_time"] for r in rows])
    dim_rows = []
    if dims:
        m = cfg.sizes[-1]
        n = max(cfg.edge_size, int(round(cfg.nodes_per_edge * m)))
        h = random_hypergraph(n, m, cfg.edge_size, rng)
        for d in dims:
            X = normalize_rows(rng.standard_normal((n, d)))
            dim_rows.append({"m": m, "n": n, "d": d, "wall_time": time_step(h, X, dcfg, cfg.repeats)})
    dim_slope = loglog_slope([r["d"] for r in dim_rows], [r["wall_time"] for r in dim_rows]) if len(dim_rows) > 1 else None
    if out_dir:
        conf = {**cfg.to_dict(), "slope_m": slope, "slope_d": dim_slope}
        write_csv(os.path.join(out_dir, "complexity.csv"), rows + dim_rows,
                  ["m", "n", "d", "wall_time"], conf, cfg.seed)
    return {"rows": rows, "slope": slope, "dim_rows": dim_rows, "dim_slope": dim_slope}
