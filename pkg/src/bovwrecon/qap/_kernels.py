"""Compiled inner loops for the layout solvers.

Array conventions follow :class:`~bovwrecon.qap.problem.QAPProblem`: ``Aw`` is
the weighted adjacency table padded with a zero slice at index ``m``; ``At`` /
``Af`` are its (d, neighbor label, own label) views; neighbor lists are CSR
(``ptr``, ``cells``, ``ds``).
"""

import math

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def local_matrix(x, PwT, At, Af, out_ptr, out_cells, out_ds):
    n, k = PwT.shape
    L = PwT.copy()
    for s in range(n):
        for e in range(out_ptr[s], out_ptr[s + 1]):
            t = out_cells[e]
            d = out_ds[e]
            xs = x[s]
            xt = x[t]
            for c in range(k):
                L[s, c] += At[d, xt, c]
                L[t, c] += Af[d, xs, c]
    return L


@njit(**_OPTS)
def _correction(Aw, p, q, f, r):
    tqp = Aw[q, p, f] + Aw[p, q, r]
    tqq = Aw[q, q, f] + Aw[q, q, r]
    tpp = Aw[p, p, f] + Aw[p, p, r]
    tpq = Aw[p, q, f] + Aw[q, p, r]
    return tqp - tqq - tpp + tpq


@njit(**_OPTS)
def swap_delta_local(x, L, Aw, pair_id, pair_f, pair_r, a, b):
    p = x[a]
    q = x[b]
    if a == b or p == q:
        return 0.0
    delta = (L[a, q] - L[a, p]) + (L[b, p] - L[b, q])
    pid = pair_id[a, b]
    if pid >= 0:
        delta += _correction(Aw, p, q, pair_f[pid], pair_r[pid])
    return delta


@njit(**_OPTS)
def best_swap(x, L, Aw, pair_id, pair_f, pair_r):
    n = x.shape[0]
    best = np.inf
    ba = -1
    bb = -1
    for a in range(n):
        p = x[a]
        lap = L[a, p]
        for b in range(a + 1, n):
            q = x[b]
            if p == q:
                continue
            delta = (L[a, q] - lap) + (L[b, p] - L[b, q])
            pid = pair_id[a, b]
            if pid >= 0:
                delta += _correction(Aw, p, q, pair_f[pid], pair_r[pid])
            if delta < best:
                best = delta
                ba = a
                bb = b
    return ba, bb, best


@njit(**_OPTS)
def _relabel(L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, cell, old, new):
    k = L.shape[1]
    for e in range(in_ptr[cell], in_ptr[cell + 1]):
        l = in_cells[e]
        d = in_ds[e]
        for c in range(k):
            L[l, c] += At[d, new, c] - At[d, old, c]
    for e in range(out_ptr[cell], out_ptr[cell + 1]):
        l = out_cells[e]
        d = out_ds[e]
        for c in range(k):
            L[l, c] += Af[d, new, c] - Af[d, old, c]


@njit(**_OPTS)
def apply_swap(x, L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, a, b):
    p = x[a]
    q = x[b]
    if a == b or p == q:
        return
    x[a] = q
    x[b] = p
    _relabel(L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, a, p, q)
    _relabel(L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, b, q, p)


@njit(**_OPTS)
def hill_climb(x, PwT, Aw, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds,
               pair_id, pair_f, pair_r, eps, max_steps):
    """Best-improvement descent in place; returns the number of swaps applied."""
    L = local_matrix(x, PwT, At, Af, out_ptr, out_cells, out_ds)
    steps = 0
    while max_steps < 0 or steps < max_steps:
        a, b, delta = best_swap(x, L, Aw, pair_id, pair_f, pair_r)
        if a < 0 or not delta < -eps:
            break
        apply_swap(x, L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, a, b)
        steps += 1
    return steps


@njit(**_OPTS)
def greedy_fill(child, filled, remaining, order, PwT, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds):
    k = PwT.shape[1]
    cost = np.empty(k)
    for cell in order:
        for c in range(k):
            cost[c] = PwT[cell, c]
        for e in range(out_ptr[cell], out_ptr[cell + 1]):
            l = out_cells[e]
            if filled[l]:
                d = out_ds[e]
                xl = child[l]
                for c in range(k):
                    cost[c] += At[d, xl, c]
        for e in range(in_ptr[cell], in_ptr[cell + 1]):
            l = in_cells[e]
            if filled[l]:
                d = in_ds[e]
                xl = child[l]
                for c in range(k):
                    cost[c] += Af[d, xl, c]
        best = -1
        best_cost = np.inf
        for c in range(k):
            if remaining[c] > 0 and (best < 0 or cost[c] < best_cost):
                best = c
                best_cost = cost[c]
        child[cell] = best
        filled[cell] = True
        remaining[best] -= 1


@njit(**_OPTS)
def anneal(x, cur, PwT, Aw, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds,
           pair_id, pair_f, pair_r, pairs, uniforms, t0, decay):
    """Metropolis swaps along a geometric schedule; returns the best layout seen."""
    L = local_matrix(x, PwT, At, Af, out_ptr, out_cells, out_ds)
    best = x.copy()
    best_val = cur
    temp = t0
    for it in range(pairs.shape[0]):
        a = pairs[it, 0]
        b = pairs[it, 1]
        if a != b and x[a] != x[b]:
            delta = swap_delta_local(x, L, Aw, pair_id, pair_f, pair_r, a, b)
            if delta <= 0.0 or uniforms[it] < math.exp(-delta / temp):
                apply_swap(x, L, At, Af, in_ptr, in_cells, in_ds, out_ptr, out_cells, out_ds, a, b)
                cur += delta
                if cur < best_val:
                    best_val = cur
                    best[:] = x
        temp *= decay
    return best
