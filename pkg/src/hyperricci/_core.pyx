# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pycore.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double TOL = 1e-12
cdef Py_ssize_t MAX_PIVOTS = 100000


cdef void _tree(Py_ssize_t[:] bi, Py_ssize_t[:] bj, Py_ssize_t nb, Py_ssize_t p, Py_ssize_t q,
                Py_ssize_t root, Py_ssize_t[:] parent, Py_ssize_t[:] pedge, Py_ssize_t[:] order,
                Py_ssize_t[:] deg, Py_ssize_t[:] adj_ptr, Py_ssize_t[:] adj, Py_ssize_t[:] adj_edge) nogil:
    cdef Py_ssize_t V = p + q, k, u, v, head, tail, s, t
    for u in range(V + 1):
        adj_ptr[u] = 0
    for k in range(nb):
        adj_ptr[bi[k] + 1] += 1
        adj_ptr[p + bj[k] + 1] += 1
    for u in range(V):
        adj_ptr[u + 1] += adj_ptr[u]
        deg[u] = 0
    for k in range(nb):
        u = bi[k]
        v = p + bj[k]
        adj[adj_ptr[u] + deg[u]] = v
        adj_edge[adj_ptr[u] + deg[u]] = k
        deg[u] += 1
        adj[adj_ptr[v] + deg[v]] = u
        adj_edge[adj_ptr[v] + deg[v]] = k
        deg[v] += 1
    for u in range(V):
        parent[u] = -2
    parent[root] = -1
    pedge[root] = -1
    order[0] = root
    head = 0
    tail = 1
    while head < tail:
        u = order[head]
        head += 1
        for s in range(adj_ptr[u], adj_ptr[u + 1]):
            v = adj[s]
            if parent[v] == -2:
                parent[v] = u
                pedge[v] = adj_edge[s]
                order[tail] = v
                tail += 1


def transport_cost(a, b, cost):
    """Exact optimal transport cost (transportation simplex)."""
    cdef double[:] ra = np.array(a, dtype=np.float64, copy=True)
    cdef double[:] rb = np.array(b, dtype=np.float64, copy=True)
    cdef const double[:, :] C = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t p = ra.shape[0], q = rb.shape[0]
    if p == 0 or q == 0:
        raise ValueError("empty measure")
    cdef Py_ssize_t nb = p + q - 1, V = p + q
    cdef Py_ssize_t[:] bi = np.empty(nb, dtype=np.intp)
    cdef Py_ssize_t[:] bj = np.empty(nb, dtype=np.intp)
    cdef double[:] x = np.empty(nb, dtype=np.float64)
    cdef cnp.uint8_t[:, :] isbasic = np.zeros((p, q), dtype=np.uint8)
    cdef Py_ssize_t[:] parent = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t[:] pedge = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t[:] order = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t[:] deg = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t[:] adj_ptr = np.empty(V + 1, dtype=np.intp)
    cdef Py_ssize_t[:] adj = np.empty(2 * nb, dtype=np.intp)
    cdef Py_ssize_t[:] adj_edge = np.empty(2 * nb, dtype=np.intp)
    cdef double[:] pot = np.empty(V, dtype=np.float64)
    cdef Py_ssize_t[:] path = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t i = 0, j = 0, k, u, w, it, i0, j0, npath, leave
    cdef double xm, r, best, theta, scale = 1.0, total
    cdef bint done = False

    with nogil:
        for i in range(p):
            for j in range(q):
                if C[i, j] > scale:
                    scale = C[i, j]
                elif -C[i, j] > scale:
                    scale = -C[i, j]
        # northwest corner
        i = 0
        j = 0
        k = 0
        while True:
            xm = ra[i] if ra[i] < rb[j] else rb[j]
            bi[k] = i
            bj[k] = j
            x[k] = xm
            isbasic[i, j] = 1
            k += 1
            ra[i] -= xm
            rb[j] -= xm
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

        for it in range(MAX_PIVOTS):
            _tree(bi, bj, nb, p, q, 0, parent, pedge, order, deg, adj_ptr, adj, adj_edge)
            pot[0] = 0.0
            for k in range(1, V):
                u = order[k]
                w = parent[u]
                if u < p:
                    pot[u] = C[u, w - p] - pot[w]
                else:
                    pot[u] = C[w, u - p] - pot[w]
            best = -TOL * scale
            i0 = -1
            j0 = -1
            for i in range(p):
                for j in range(q):
                    if isbasic[i, j]:
                        continue
                    r = C[i, j] - pot[i] - pot[p + j]
                    if r < best:
                        best = r
                        i0 = i
                        j0 = j
            if i0 < 0:
                done = True
                break
            _tree(bi, bj, nb, p, q, i0, parent, pedge, order, deg, adj_ptr, adj, adj_edge)
            npath = 0
            u = p + j0
            while parent[u] != -1:
                path[npath] = pedge[u]
                npath += 1
                u = parent[u]
            theta = x[path[0]]
            leave = path[0]
            for k in range(0, npath, 2):
                w = path[k]
                if x[w] < theta or (x[w] == theta and (bi[w] < bi[leave] or (bi[w] == bi[leave] and bj[w] < bj[leave]))):
                    theta = x[w]
                    leave = w
            for k in range(npath):
                if k % 2 == 0:
                    x[path[k]] -= theta
                else:
                    x[path[k]] += theta
            isbasic[bi[leave], bj[leave]] = 0
            bi[leave] = i0
            bj[leave] = j0
            x[leave] = theta
            isbasic[i0, j0] = 1
    if not done:
        raise RuntimeError("transportation simplex did not converge")
    total = 0.0
    for k in range(nb):
        total += C[bi[k], bj[k]] * x[k]
    return total


def edge_direction(edge_ptr, edge_nodes, inv_sqrt_deg, X, kprime, bint use_cosine):
    """Edge-by-edge evaluation of the curvature-weighted update direction."""
    cdef const cnp.int64_t[:] ptr = np.ascontiguousarray(edge_ptr, dtype=np.int64)
    cdef const cnp.int64_t[:] nodes = np.ascontiguousarray(edge_nodes, dtype=np.int64)
    cdef const double[:] isd = np.ascontiguousarray(inv_sqrt_deg, dtype=np.float64)
    cdef const double[:, :] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:] kp = np.ascontiguousarray(kprime, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], d = Xv.shape[1], m = ptr.shape[0] - 1
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef double[:] norms = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t e, a, b, i, j, t
    cdef double s, c, coef
    cdef bint same
    with nogil:
        for i in range(n):
            s = 0.0
            for t in range(d):
                s += Xv[i, t] * Xv[i, t]
            norms[i] = sqrt(s)
        for e in range(m):
            for a in range(ptr[e], ptr[e + 1]):
                i = nodes[a]
                for b in range(ptr[e], ptr[e + 1]):
                    j = nodes[b]
                    coef = -kp[e] * isd[i] * isd[j]
                    c = 1.0
                    if use_cosine:
                        same = 1
                        s = 0.0
                        for t in range(d):
                            s += Xv[i, t] * Xv[j, t]
                            if Xv[i, t] != Xv[j, t]:
                                same = 0
                        # identical rows get c = 1 exactly so their term vanishes
                        if not same:
                            c = s / (norms[i] * norms[j])
                    for t in range(d):
                        out[i, t] += coef * (Xv[j, t] - c * Xv[i, t])
    return out_arr
