"""Command line entry point: ``hyperricci <subcommand> ...``.

Every subcommand writes its artifacts into ``--out-dir`` and prints a JSON
summary on stdout.  CSV artifacts carry a ``.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .curvature import CURVATURE_KINDS, curvature
from .diffusion import DiffusionConfig, StabilityError, DivergenceError, analytic_provider, diffuse
from .experiments import (
    DEPTHS,
    NOISE_RATES,
    COMPLEXITY_SIZES,
    ComplexityConfig,
    OversmoothConfig,
    RobustnessConfig,
    run_complexity_probe,
    run_oversmooth_suite,
    run_robustness_suite,
    write_csv,
)
from .flow import WeightRuleConfig, attribute_weight, convergence_monitor, run_weight_flow, FlowStepError
from .hypergraph import Dataset, HypergraphError, load_dataset, normalize_rows, save_dataset
from .kernels import BACKEND
from .neural import ABLATIONS, TrainConfig, forward_learned_kprime, load_params, save_params, train
from .synthgen import NOISE_KINDS, NoiseConfig, SbmConfig, apply_noise, generate_sbm

log = logging.getLogger("hyperricci")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name,
                           "time": self.formatTime(record), "message": record.getMessage()})


def _setup_logging(json_logs: bool, verbose: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("hyperricci")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _sbm_from(args, alpha: Optional[int] = None) -> SbmConfig:
    return SbmConfig(n_per_class=args.n_per_class, edges=args.edges, edge_size=args.edge_size,
                     alpha=alpha if alpha is not None else args.alpha, std=args.std, seed=args.seed,
                     feature_dim=args.feature_dim, class_sep=args.class_sep)


def _dataset_or_sbm(args) -> Dataset:
    if getattr(args, "dataset", None):
        return load_dataset(args.dataset)
    return generate_sbm(_sbm_from(args))


def _train_cfg(args, **over) -> TrainConfig:
    cfg = TrainConfig(lr=args.lr, weight_decay=args.wd, dropout=args.dropout, hidden=args.hidden,
                      epochs=args.epochs, seed=args.seed, steps=args.steps, tau=args.tau,
                      model=args.model, ablation=args.ablation)
    return replace(cfg, **over)


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    ds = generate_sbm(_sbm_from(args))
    path = args.out or _out(args, f"sbm_alpha{args.alpha}_seed{args.seed}.json")
    save_dataset(ds, path)
    _emit({"path": path, "n": ds.hypergraph.n, "m": ds.hypergraph.m, "config": _sbm_from(args).to_dict()})
    return 0


def cmd_noise(args) -> int:
    ds = load_dataset(args.input)
    noisy = apply_noise(ds, NoiseConfig(kind=args.kind, rate=args.rate, seed=args.seed))
    save_dataset(noisy, args.out)
    _emit({"path": args.out, "kind": args.kind, "rate": args.rate, "m": noisy.hypergraph.m})
    return 0


def _weights(args, ds: Dataset) -> np.ndarray:
    if args.weights == "file":
        if ds.weights is None:
            raise HypergraphError("dataset has no weights")
        return ds.weights
    if args.weights == "attribute":
        if ds.features is None:
            raise HypergraphError("attribute weights need features")
        return attribute_weight(ds.hypergraph, normalize_rows(ds.features), WeightRuleConfig(args.epsilon))
    return np.ones(ds.hypergraph.m)


def _curv_opts(args) -> dict:
    if args.kind == "forman":
        return {"include_self": args.include_self}
    return {"keep_self": args.keep_self}


def cmd_curvature(args) -> int:
    ds = load_dataset(args.dataset)
    h = ds.hypergraph
    w = _weights(args, ds)
    kappa = curvature(h, w, args.kind, **_curv_opts(args))
    rows = [{"edge_id": e, "size": int(h.edge_size[e]), "weight": float(w[e]), "kappa": float(kappa[e])}
            for e in range(h.m)]
    path = _out(args, f"curvature_{args.kind}.csv")
    write_csv(path, rows, ["edge_id", "size", "weight", "kappa"], vars_json(args), args.seed)
    _emit({"path": path, "min": float(kappa.min()), "max": float(kappa.max()), "mean": float(kappa.mean())})
    return 0


def cmd_flow(args) -> int:
    ds = load_dataset(args.dataset)
    h = ds.hypergraph
    w0 = _weights(args, ds)
    times, W, K = run_weight_flow(h, w0, args.dt, args.steps, args.kind,
                                  stop_below=args.delta if args.stop else None, **_curv_opts(args))
    report = convergence_monitor(times, K, args.delta, weight_traj=W, epsilon=float(W.min()))
    traj = [{"t": float(times[s]), "edge_id": e, "w": float(W[s, e]), "kappa": float(K[s, e])}
            for s in range(len(times)) for e in range(h.m)]
    path = _out(args, f"flow_{args.kind}.csv")
    write_csv(path, traj, ["t", "edge_id", "w", "kappa"], vars_json(args), args.seed)
    max_abs = np.abs(K).max(axis=1)
    summary = report.to_dict()
    summary.pop("abs_kappa")
    with open(_out(args, f"flow_{args.kind}.report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, default=float)
    _emit({"path": path, "steps_run": len(times) - 1, "final_max_abs_kappa": float(max_abs[-1]),
           "hit_times": summary["hit_time"], "bound": summary["bound"], "L": summary["L"]})
    return 0


def cmd_diffuse(args) -> int:
    ds = load_dataset(args.dataset)
    h = ds.hypergraph
    if ds.features is None:
        raise HypergraphError("diffusion needs node features")
    cfg = DiffusionConfig(tau=args.tau, T=args.steps, mode=args.mode, use_cosine=not args.no_cosine,
                          curvature=args.curvature, epsilon_denominator=args.eps_denominator,
                          renormalize_each_step=not args.no_renormalize)
    X0 = ds.features
    provider = None
    if args.mode == "learned":
        if not args.params:
            raise ValueError("--mode learned needs --params from a train run")
        model = load_params(args.params)
        X0 = model.encoder(ds.features)
        nets = (model.theta1, model.theta2)
        provider = lambda hh, X, t: forward_learned_kprime(hh, X, nets, model.cfg.layout)  # noqa: E731
    else:
        provider = analytic_provider(cfg)
    snaps = _ints(args.snapshot_steps) if args.snapshot_steps else ()
    res = diffuse(h, X0, cfg, provider, force=args.force, snapshot_steps=snaps, keep_trajectory=False)
    rows = []
    for s in range(len(res.energy)):
        cert = res.certificates[s] if s < len(res.certificates) else None
        rows.append({"step": s, "energy": float(res.energy[s]),
                     "max_row_sum": "" if cert is None else cert.max_row_sum,
                     "min_w": float(res.weights[s].min()), "max_w": float(res.weights[s].max())})
    path = _out(args, "diffuse.csv")
    write_csv(path, rows, ["step", "energy", "max_row_sum", "min_w", "max_w"], vars_json(args), args.seed)
    for s, X in res.snapshots.items():
        np.savetxt(_out(args, f"diffuse_step{s}.csv"), X, delimiter=",", fmt="%.17g")
    summary = {"path": path, "energy": res.energy.tolist(),
               "certificate": res.certificates[0].to_dict() if res.certificates else None}
    if res.energy_report is not None:
        summary["energy_report"] = {k: v for k, v in res.energy_report.to_dict().items()
                                    if k in ("mean_energy", "B1", "B2", "form", "within", "approximate")}
    _emit(summary)
    return 0


def cmd_train(args) -> int:
    ds = _dataset_or_sbm(args)
    if ds.features is None or ds.labels is None:
        raise HypergraphError("training needs features and labels")
    cfg = _train_cfg(args)
    res = train(ds.hypergraph, ds.features, ds.labels, cfg)
    params_path = _out(args, "params.npz")
    save_params(res.model, params_path)
    metrics = res.metrics()
    with open(_out(args, "train_metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    _emit({"params": params_path, "test_accuracy": res.test_accuracy, "val_accuracy": res.val_accuracy,
           "train_accuracy": res.train_accuracy, "best_epoch": res.best_epoch})
    return 0


def cmd_oversmooth(args) -> int:
    cfg = OversmoothConfig(sbm=_sbm_from(args), train=_train_cfg(args), depths=_ints(args.depths),
                           seeds=tuple(range(args.seed, args.seed + args.n_seeds)))
    rows = run_oversmooth_suite(cfg, args.out_dir, workers=args.threads)
    _emit({"path": os.path.join(args.out_dir, "oversmooth.csv"), "rows": rows})
    return 0


def cmd_robustness(args) -> int:
    cfg = RobustnessConfig(sbm=_sbm_from(args), train=_train_cfg(args), kinds=tuple(args.kinds.split(",")),
                           rates=_floats(args.rates), seeds=tuple(range(args.seed, args.seed + args.n_seeds)))
    rows = run_robustness_suite(cfg, args.out_dir, workers=args.threads)
    _emit({"path": os.path.join(args.out_dir, "robustness.csv"), "runs": len(rows)})
    return 0


def cmd_complexity(args) -> int:
    cfg = ComplexityConfig(sizes=_ints(args.sizes), edge_size=args.edge_size, feature_dim=args.feature_dim,
                           repeats=args.repeats, seed=args.seed)
    res = run_complexity_probe(cfg, args.out_dir, dims=_ints(args.dims) if args.dims else ())
    _emit({"path": os.path.join(args.out_dir, "complexity.csv"), "slope": res["slope"],
           "dim_slope": res["dim_slope"], "rows": res["rows"]})
    return 0


def vars_json(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------- parser

def _add_sbm(p, alpha_default: int = 1) -> None:
    p.add_argument("--alpha", type=int, default=alpha_default, help="minority members per hyperedge")
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--edges", type=int, default=200)
    p.add_argument("--edge-size", type=int, default=15)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--class-sep", type=float, default=1.0)


def _add_train(p) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--wd", type=float, default=d.weight_decay)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--model", choices=("diffusion", "mean"), default=d.model)
    p.add_argument("--ablation", choices=ABLATIONS, default="none")


def _add_weights(p) -> None:
    p.add_argument("--curvature", "--kind", dest="kind", choices=CURVATURE_KINDS, default="forman")
    p.add_argument("--weights", choices=("unit", "file", "attribute"), default="unit")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--include-self", action="store_true", help="Forman: count the edge itself in attachments")
    p.add_argument("--keep-self", action="store_true", help="Ollivier: keep self mass in node measures")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for suites")
    common.add_argument("--json-logs", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="hyperricci", description="Curvature-guided hypergraph diffusion toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json-logs", action="store_true")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a hypergraph SBM dataset")
    _add_sbm(s)
    s.add_argument("--out", help="dataset path (default: <out-dir>/sbm_alpha<A>_seed<S>.json)")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("noise", parents=[common], help="apply a noise protocol to a dataset")
    s.add_argument("--kind", choices=NOISE_KINDS, required=True)
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("curvature", parents=[common], help="per-edge curvature of a dataset")
    s.add_argument("--dataset", required=True)
    _add_weights(s)
    s.set_defaults(func=cmd_curvature)

    s = sub.add_parser("flow", parents=[common], help="pure weight Ricci flow with convergence report")
    s.add_argument("--dataset", required=True)
    _add_weights(s)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--delta", type=float, default=1e-2)
    s.add_argument("--stop", action="store_true", help="stop once max |kappa| < delta")
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("diffuse", parents=[common], help="run curvature-modulated feature diffusion")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=("analytic", "learned"), default="analytic")
    s.add_argument("--params", help="params snapshot for --mode learned")
    s.add_argument("--curvature", choices=CURVATURE_KINDS, default="forman")
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--eps-denominator", type=float, default=1e-3)
    s.add_argument("--no-cosine", action="store_true")
    s.add_argument("--no-renormalize", action="store_true")
    s.add_argument("--force", action="store_true", help="run even above the step-0 stability bound")
    s.add_argument("--snapshot-steps", help="comma separated steps whose features are exported")
    s.set_defaults(func=cmd_diffuse)

    s = sub.add_parser("train", parents=[common], help="train a node classifier")
    s.add_argument("--dataset", help="dataset file; an SBM is generated when omitted")
    _add_sbm(s)
    _add_train(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("oversmooth", parents=[common], help="accuracy and energy against depth")
    _add_sbm(s, alpha_default=2)
    _add_train(s)
    s.add_argument("--depths", default=",".join(map(str, DEPTHS)))
    s.add_argument("--n-seeds", type=int, default=1)
    s.set_defaults(func=cmd_oversmooth)

    s = sub.add_parser("robustness", parents=[common], help="accuracy under noise")
    _add_sbm(s, alpha_default=2)
    _add_train(s)
    s.add_argument("--kinds", default=",".join(NOISE_KINDS))
    s.add_argument("--rates", default=",".join(map(str, NOISE_RATES)))
    s.add_argument("--n-seeds", type=int, default=5)
    s.set_defaults(func=cmd_robustness)

    s = sub.add_parser("complexity", parents=[common], help="per-step wall time against m")
    s.add_argument("--sizes", default=",".join(map(str, COMPLEXITY_SIZES)))
    s.add_argument("--edge-size", type=int, default=5)
    s.add_argument("--feature-dim", type=int, default=16)
    s.add_argument("--dims", help="comma separated feature dims for the dimension probe")
    s.add_argument("--repeats", type=int, default=7)
    s.set_defaults(func=cmd_complexity)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.json_logs, args.verbose)
    try:
        return args.func(args)
    except (HypergraphError, StabilityError, DivergenceError, FlowStepError, ValueError,
            RuntimeError, OSError) as exc:
        if args.json_logs:
            log.error("%s", exc)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
