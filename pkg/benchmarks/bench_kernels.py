"""Compiled vs pure-Python kernel timings.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Times the transportation simplex on random measures of growing support and
the edge-by-edge update direction on random hypergraphs, once per backend,
and checks that both backends return the same numbers.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from hyperricci import _pycore
from hyperricci.experiments import random_hypergraph
from hyperricci.hypergraph import normalize_rows

try:
    from hyperricci import _core
except ImportError:
    _core = None


def best_of(fn, repeats: int) -> float:
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def bench_transport(rng, repeats):
    rows = []
    for k in (4, 8, 16, 32):
        a = rng.random(k); a /= a.sum()
        b = rng.random(k); b /= b.sum()
        C = rng.integers(1, 5, size=(k, k)).astype(float)
        row = {"kernel": "transport_cost", "size": k}
        row["python_s"] = best_of(lambda: _pycore.transport_cost(a, b, C), repeats)
        if _core is not None:
            row["cython_s"] = best_of(lambda: _core.transport_cost(a, b, C), repeats)
            row["max_abs_diff"] = abs(_core.transport_cost(a, b, C) - _pycore.transport_cost(a, b, C))
        rows.append(row)
    return rows


def bench_direction(rng, repeats):
    rows = []
    for m in (250, 1000, 4000):
        h = random_hypergraph(m, m, 6, rng)
        X = normalize_rows(rng.standard_normal((m, 16)))
        kp = rng.standard_normal(m)
        isd = 1.0 / np.sqrt(h.node_degree.astype(float))
        args = (h.edge_ptr, h.edge_nodes, isd, X, kp, True)
        row = {"kernel": "edge_direction", "size": m}
        row["python_s"] = best_of(lambda: _pycore.edge_direction(*args), repeats)
        if _core is not None:
            row["cython_s"] = best_of(lambda: _core.edge_direction(*args), repeats)
            row["max_abs_diff"] = float(np.abs(_core.edge_direction(*args) - _pycore.edge_direction(*args)).max())
        rows.append(row)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    rows = bench_transport(rng, args.repeats) + bench_direction(rng, args.repeats)
    if _core is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<16}{'size':>6}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max diff':>12}")
    for r in rows:
        cy = r.get("cython_s")
        print(f"{r['kernel']:<16}{r['size']:>6}{1e3 * r['python_s']:>14.3f}"
              + (f"{1e3 * cy:>14.3f}{r['python_s'] / cy:>10.1f}{r['max_abs_diff']:>12.1e}" if cy else ""))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
