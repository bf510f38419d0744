"""Pure-Python/numpy versions of the compiled kernels in ``_core.pyx``.

Both modules expose the same two functions with identical semantics; the
package picks one at import time (see :mod:`hyperricci.kernels`).
"""

import numpy as np

TOL = 1e-12
MAX_PIVOTS = 100000


def _northwest(a, b):
    p, q = len(a), len(b)
    ra, rb = list(a), list(b)
    flow = {}
    i = j = 0
    while True:
        x = min(ra[i], rb[j])
        flow[(i, j)] = x
        ra[i] -= x
        rb[j] -= x
        if i == p - 1 and j == q - 1:
            break
        if i == p - 1:
            j += 1
        elif j == q - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return flow


def _tree_parents(basis, p, q, root):
    # tree vertices: rows 0..p-1, columns p..p+q-1
    adj = [[] for _ in range(p + q)]
    for (i, j) in basis:
        adj[i].append(p + j)
        adj[p + j].append(i)
    parent = [-2] * (p + q)
    parent[root] = -1
    order = [root]
    k = 0
    while k < len(order):
        u = order[k]
        k += 1
        for v in adj[u]:
            if parent[v] == -2:
                parent[v] = u
                order.append(v)
    return parent, order


def transport_cost(a, b, cost):
    """Exact optimal transport cost between histograms ``a`` and ``b``.

    Transportation simplex: northwest-corner start, MODI potentials, most
    negative reduced cost enters, ties broken by lowest index.

    Parameters
    ----------
    a : (p,) array_like
        Source masses, nonnegative.
    b : (q,) array_like
        Target masses, nonnegative, same total as ``a``.
    cost : (p, q) array_like
        Ground cost.

    Returns
    -------
    float
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    C = np.asarray(cost, dtype=np.float64).tolist()
    p, q = len(a), len(b)
    if p == 0 or q == 0:
        raise ValueError("empty measure")
    flow = _northwest(a, b)
    scale = max(1.0, max(abs(c) for row in C for c in row))
    for _ in range(MAX_PIVOTS):
        basis = list(flow)
        parent, order = _tree_parents(basis, p, q, 0)
        pot = [0.0] * (p + q)
        for u in order[1:]:
            w = parent[u]
            if u < p:
                pot[u] = C[u][w - p] - pot[w]
            else:
                pot[u] = C[w][u - p] - pot[w]
        best = -TOL * scale
        enter = None
        for i in range(p):
            Ci = C[i]
            ui = pot[i]
            for j in range(q):
                if (i, j) in flow:
                    continue
                r = Ci[j] - ui - pot[p + j]
                if r < best:
                    best = r
                    enter = (i, j)
        if enter is None:
            break
        i0, j0 = enter
        # path from column j0 up to root, then from row i0; join at LCA
        parent, order = _tree_parents(basis, p, q, i0)
        path = []
        v = p + j0
        while parent[v] != -1:
            path.append((parent[v], v))
            v = parent[v]
        # path lists edges from column j0 back to row i0; first edge gets '-'
        cells = []
        for (x, y) in path:
            r, c = (x, y - p) if x < p else (y, x - p)
            cells.append((r, c))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leave = min((c for c in minus if flow[c] == theta))
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        del flow[leave]
        flow[enter] = theta
    else:
        raise RuntimeError("transportation simplex did not converge")
    return float(sum(C[i][j] * x for (i, j), x in flow.items()))


def edge_direction(edge_ptr, edge_nodes, inv_sqrt_deg, X, kprime, use_cosine):
    """Edge-by-edge evaluation of the curvature-weighted update direction.

    Row ``i`` of the result is
    ``sum_{e ∋ i} -kprime[e] * sum_{j in e} (x_j - c_ij x_i) / sqrt(d_i d_j)``
    with ``c_ij`` the cosine of ``x_i, x_j`` (or 1 when ``use_cosine`` is false).
    """
    X = np.asarray(X, dtype=np.float64)
    edge_ptr = np.asarray(edge_ptr)
    edge_nodes = np.asarray(edge_nodes)
    sizes = np.diff(edge_ptr)
    eid = np.repeat(np.arange(sizes.size), sizes)
    # ordered pairs (i, j) within each edge
    reps = sizes[eid]
    ii = np.repeat(edge_nodes, reps)
    start = np.repeat(edge_ptr[eid], reps)
    offs = np.arange(ii.size) - np.repeat(np.cumsum(reps) - reps, reps)
    jj = edge_nodes[start + offs]
    ee = np.repeat(eid, reps)
    w = -np.asarray(kprime, dtype=np.float64)[ee] * inv_sqrt_deg[ii] * inv_sqrt_deg[jj]
    if use_cosine:
        norms = np.linalg.norm(X, axis=1)
        c = np.einsum("ij,ij->i", X[ii], X[jj]) / (norms[ii] * norms[jj])
        # identical rows get c = 1 exactly so their term vanishes
        c[np.all(X[ii] == X[jj], axis=1)] = 1.0
    else:
        c = np.ones(ii.size)
    contrib = w[:, None] * (X[jj] - c[:, None] * X[ii])
    out = np.zeros_like(X)
    np.add.at(out, ii, contrib)
    return out
