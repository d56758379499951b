"""Layout objective and its incremental (swap) evaluation.

For a layout ``x`` (flat label vector over the ``N = grid_h * grid_w`` cells)::

    E(x) = (1 - lam) * sum_{k, d} A[x_k, x_{k+d}, d] + lam * sum_k P[x_k, k]

where ``d`` runs over the offset set and pairs leaving the grid are skipped.

Swap deltas are computed from the *local cost matrix* ``L[k, c]``: the cost of
all terms touching cell ``k`` if it held label ``c`` while every other cell
keeps its current label.  Swapping cells a and b (labels p, q) then changes the
objective by ``L[a,q] - L[a,p] + L[b,p] - L[b,q]`` plus a correction for the
terms linking a and b directly, when they are neighbors.
"""

from typing import Optional, Tuple

import numpy as np

from . import _kernels
from ..costs import AdjacencyCost, PositionCost, neighbor_pairs
from ..errors import InvalidInputError


class QAPProblem:
    """Precomputed geometry and weighted cost tables for one (grid, costs, lambda) triple."""

    def __init__(self, shape: Tuple[int, int], ca: AdjacencyCost, cp: PositionCost, lam: float):
        gh, gw = int(shape[0]), int(shape[1])
        n = gh * gw
        if not 0.0 <= lam <= 1.0:
            raise InvalidInputError(f"lambda={lam} outside [0, 1]")
        if ca.K != cp.K:
            raise InvalidInputError(f"adjacency K={ca.K} != position K={cp.K}")
        if cp.N != n:
            raise InvalidInputError(f"position cost has N={cp.N} places, grid has {n}")
        self.shape = (gh, gw)
        self.N = n
        self.K = ca.K
        self.lam = float(lam)
        self.offsets = ca.offsets
        self.m = ca.m
        self.A = ca.table
        self.P = cp.table

        w_adj = 1.0 - self.lam
        # padded with a zero slice so a sentinel offset index contributes nothing
        self.Aw = np.zeros((self.K, self.K, self.m + 1))
        self.Aw[:, :, : self.m] = w_adj * self.A
        # At[d, j, c] = Aw[c, j, d]  (cell as source, neighbor label j fixed)
        # Af[d, i, c] = Aw[i, c, d]  (cell as target, neighbor label i fixed)
        self.At = np.ascontiguousarray(self.Aw[:, :, : self.m].transpose(2, 1, 0))
        self.Af = np.ascontiguousarray(self.Aw[:, :, : self.m].transpose(2, 0, 1))
        self.PwT = np.ascontiguousarray(self.lam * self.P.T)  # (N, K)

        self.src, self.dst = [], []
        for dx, dy in self.offsets.offsets:
            s, t = neighbor_pairs(gh, gw, dx, dy)
            self.src.append(s)
            self.dst.append(t)
        self._build_cell_tables()
        self._build_pair_tables()

    # -- precomputation --------------------------------------------------

    def _build_cell_tables(self):
        # out: for cell k, neighbor cells l = k + d with offset ids d
        # in:  for cell k, cells l with l + d = k
        # both ordered by offset id, then by the other cell
        sizes = [s.size for s in self.src]
        all_src = np.concatenate(self.src) if sizes else np.zeros(0, dtype=np.int64)
        all_dst = np.concatenate(self.dst) if sizes else np.zeros(0, dtype=np.int64)
        all_d = np.repeat(np.arange(self.m, dtype=np.int64), sizes)

        def csr(key, other):
            order = np.argsort(key, kind="stable")
            ptr = np.zeros(self.N + 1, dtype=np.int64)
            ptr[1:] = np.cumsum(np.bincount(key, minlength=self.N))
            return ptr, other[order].astype(np.int64), all_d[order]

        self.out_csr = csr(all_src, all_dst)
        self.in_csr = csr(all_dst, all_src)
        split = lambda a, ptr: np.split(a, ptr[1:-1])
        self.out_cells, self.out_ds = split(self.out_csr[1], self.out_csr[0]), split(self.out_csr[2], self.out_csr[0])
        self.in_cells, self.in_ds = split(self.in_csr[1], self.in_csr[0]), split(self.in_csr[2], self.in_csr[0])

    def _build_pair_tables(self):
        # Ordered cell pairs (a, b) linked by at least one offset term, with the
        # offset index of b - a (forward) and of a - b (backward), m if absent.
        index = self.offsets.index()
        union = sorted(set(self.offsets.offsets) | {(-dx, -dy) for dx, dy in self.offsets.offsets})
        gh, gw = self.shape
        pa, pb, fi, bi = [], [], [], []
        for dx, dy in union:
            s, t = neighbor_pairs(gh, gw, dx, dy)
            pa.append(s)
            pb.append(t)
            fi.append(np.full(s.size, index.get((dx, dy), self.m)))
            bi.append(np.full(s.size, index.get((-dx, -dy), self.m)))
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
        self.pair_a, self.pair_b = cat(pa), cat(pb)
        self.pair_f, self.pair_r = cat(fi), cat(bi)
        self.pair_id = np.full((self.N, self.N), -1, dtype=np.int64)
        self.pair_id[self.pair_a, self.pair_b] = np.arange(self.pair_a.size)
        self._pair_f_list = self.pair_f.tolist()
        self._pair_r_list = self.pair_r.tolist()
        self._iu = np.triu_indices(self.N, 1)

    # -- evaluation --------------------------------------------------------

    def check(self, labels: np.ndarray) -> np.ndarray:
        x = np.asarray(labels, dtype=np.int64).reshape(-1)
        if x.size != self.N:
            raise InvalidInputError(f"layout has {x.size} cells, problem has {self.N}")
        if x.size and (x.min() < 0 or x.max() >= self.K):
            raise InvalidInputError(f"layout labels must lie in [0, {self.K})")
        return x

    def adjacency_energy(self, x: np.ndarray) -> float:
        total = 0.0
        for d in range(self.m):
            if self.src[d].size:
                total += float(self.A[x[self.src[d]], x[self.dst[d]], d].sum())
        return total

    def position_energy(self, x: np.ndarray) -> float:
        return float(self.P[x, np.arange(self.N)].sum())

    def objective(self, x: np.ndarray) -> float:
        return (1.0 - self.lam) * self.adjacency_energy(x) + self.lam * self.position_energy(x)

    def objective_batch(self, X: np.ndarray) -> np.ndarray:
        """Objective of every row of a (M, N) label matrix."""
        X = np.asarray(X, dtype=np.int64)
        adj = np.zeros(X.shape[0])
        for d in range(self.m):
            if self.src[d].size:
                adj += self.A[X[:, self.src[d]], X[:, self.dst[d]], d].sum(axis=1)
        pos = self.P[X, np.arange(self.N)[None, :]].sum(axis=1)
        return (1.0 - self.lam) * adj + self.lam * pos

    def local_matrix(self, x: np.ndarray) -> np.ndarray:
        """L[k, c]: weighted cost of every term touching cell k if it held label c.

        Vectorized numpy version; the solvers use the compiled twin in ``_kernels``.
        """
        L = self.PwT.copy()
        for d in range(self.m):
            s, t = self.src[d], self.dst[d]
            if s.size:
                L[s] += self.At[d, x[t]]
                L[t] += self.Af[d, x[s]]
        return L

    def _pair_term(self, u, v, f, r):
        return self.Aw[u, v, f] + self.Aw[v, u, r]

    def delta_matrix(self, x: np.ndarray, L: np.ndarray) -> np.ndarray:
        """D[a, b] = objective change of swapping cells a and b (all pairs at once)."""
        own = L[np.arange(self.N), x]
        G = L[:, x] - own[:, None]
        D = G + G.T
        if self.pair_a.size:
            p, q = x[self.pair_a], x[self.pair_b]
            f, r = self.pair_f, self.pair_r
            corr = (self._pair_term(q, p, f, r) - self._pair_term(q, q, f, r)
                    - self._pair_term(p, p, f, r) + self._pair_term(p, q, f, r))
            D[self.pair_a, self.pair_b] += corr
        return D

    def best_swap_reference(self, x: np.ndarray, L: np.ndarray) -> Tuple[int, int, float]:
        """Lowest-delta swap over all cell pairs; ties go to the smallest (a, b)."""
        if self.N < 2:
            return 0, 0, 0.0
        vals = self.delta_matrix(x, L)[self._iu]
        i = int(np.argmin(vals))
        return int(self._iu[0][i]), int(self._iu[1][i]), float(vals[i])

    def local_cost(self, x: np.ndarray, k: int, c: int) -> float:
        """One entry of the local cost matrix computed directly in O(m)."""
        val = self.PwT[k, c]
        oc = self.out_cells[k]
        if oc.size:
            val += self.Aw[c, x[oc], self.out_ds[k]].sum()
        ic = self.in_cells[k]
        if ic.size:
            val += self.Aw[x[ic], c, self.in_ds[k]].sum()
        return float(val)

    def pair_correction(self, x: np.ndarray, a: int, b: int) -> float:
        pid = self.pair_id[a, b]
        if pid < 0:
            return 0.0
        p, q = int(x[a]), int(x[b])
        f, r = self._pair_f_list[pid], self._pair_r_list[pid]
        Aw = self.Aw
        T = lambda u, v: Aw[u, v, f] + Aw[v, u, r]
        return float(T(q, p) - T(q, q) - T(p, p) + T(p, q))

    def swap_delta(self, x: np.ndarray, a: int, b: int) -> float:
        """Objective change of exchanging the labels of cells a and b, in O(m)."""
        if a == b:
            return 0.0
        p, q = int(x[a]), int(x[b])
        if p == q:
            return 0.0
        return (self.local_cost(x, a, q) - self.local_cost(x, a, p)
                + self.local_cost(x, b, p) - self.local_cost(x, b, q)
                + self.pair_correction(x, a, b))

    def swap_delta_from_local(self, x: np.ndarray, L: np.ndarray, a: int, b: int) -> float:
        p, q = int(x[a]), int(x[b])
        if a == b or p == q:
            return 0.0
        La, Lb = L[a], L[b]
        return float(La[q] - La[p] + Lb[p] - Lb[q]) + self.pair_correction(x, a, b)

    def _relabel(self, L: np.ndarray, k: int, old: int, new: int) -> None:
        # neighbors that see cell k as their target / source
        ic, ids = self.in_cells[k], self.in_ds[k]
        if ic.size:
            L[ic] += self.At[ids, new] - self.At[ids, old]
        oc, ods = self.out_cells[k], self.out_ds[k]
        if oc.size:
            L[oc] += self.Af[ods, new] - self.Af[ods, old]

    def apply_swap(self, x: np.ndarray, L: Optional[np.ndarray], a: int, b: int) -> None:
        """Swap cells a and b in place, keeping the local cost matrix current."""
        p, q = int(x[a]), int(x[b])
        if a == b or p == q:
            return
        x[a], x[b] = q, p
        if L is not None:
            self._relabel(L, a, p, q)
            self._relabel(L, b, q, p)

    def greedy_costs(self, x: np.ndarray, filled: np.ndarray, k: int) -> np.ndarray:
        """Cost of each label at cell k counting only already-filled neighbors."""
        cost = self.PwT[k].copy()
        oc, ods = self.out_cells[k], self.out_ds[k]
        if oc.size:
            sel = filled[oc]
            if sel.any():
                cost += self.At[ods[sel], x[oc[sel]]].sum(axis=0)
        ic, ids = self.in_cells[k], self.in_ds[k]
        if ic.size:
            sel = filled[ic]
            if sel.any():
                cost += self.Af[ids[sel], x[ic[sel]]].sum(axis=0)
        return cost

    # -- compiled paths used by the solvers ------------------------------------

    def _geometry(self):
        return (self.in_csr[0], self.in_csr[1], self.in_csr[2],
                self.out_csr[0], self.out_csr[1], self.out_csr[2])

    def fast_local_matrix(self, x: np.ndarray) -> np.ndarray:
        return _kernels.local_matrix(x, self.PwT, self.At, self.Af, *self.out_csr)

    def hill_climb_inplace(self, x: np.ndarray, eps: float, max_steps: Optional[int] = None) -> int:
        """Best-improvement 2-swap descent on ``x`` in place; returns the swap count."""
        return int(_kernels.hill_climb(
            x, self.PwT, self.Aw, self.At, self.Af, *self._geometry(),
            self.pair_id, self.pair_f, self.pair_r, float(eps), -1 if max_steps is None else int(max_steps)))

    def greedy_fill(self, child: np.ndarray, filled: np.ndarray, remaining: np.ndarray, order: np.ndarray) -> None:
        _kernels.greedy_fill(child, filled, remaining, order, self.PwT, self.At, self.Af, *self._geometry())

    def anneal(self, x: np.ndarray, pairs: np.ndarray, uniforms: np.ndarray, t0: float, decay: float) -> np.ndarray:
        return _kernels.anneal(x, self.objective(x), self.PwT, self.Aw, self.At, self.Af, *self._geometry(),
                               self.pair_id, self.pair_f, self.pair_r, pairs, uniforms, float(t0), float(decay))
