"""Layout recovery as a quadratic assignment problem."""

from ..costs import AdjacencyCost, PositionCost
from ..errors import InvalidInputError
from ..pipeline import Layout
from .problem import QAPProblem
from .solvers import (
    SOLVERS,
    GAStats,
    SolverConfig,
    brute_force_solve,
    count_arrangements,
    crossover,
    ga_hc_solve,
    hill_climb,
    hill_climb_full_recompute,
    multiset_permutations,
    random_layout,
    similarity,
    simulated_annealing,
    solve,
)


def objective(layout: Layout, ca: AdjacencyCost, cp: PositionCost, lam: float) -> float:
    """Weighted layout cost: ``(1 - lam) * adjacency + lam * position``."""
    prob = QAPProblem(layout.shape, ca, cp, lam)
    return prob.objective(prob.check(layout.flat))


def swap_delta(layout: Layout, cell_a: int, cell_b: int, ca: AdjacencyCost, cp: PositionCost, lam: float) -> float:
    prob = QAPProblem(layout.shape, ca, cp, lam)
    x = prob.check(layout.flat)
    for c in (cell_a, cell_b):
        if not 0 <= c < prob.N:
            raise InvalidInputError(f"cell {c} outside [0, {prob.N})")
    return prob.swap_delta(x, int(cell_a), int(cell_b))


def lawler_coefficient(i: int, j: int, k: int, l: int, ca: AdjacencyCost, cp: PositionCost,
                       lam: float, N: int, grid_w: int) -> float:
    """Coefficient ``c_ijkl`` of the Lawler form ``sum c_ijkl x_ik x_jl``.

    ``i, j`` are word labels, ``k, l`` flat cell indices on a grid ``grid_w``
    cells wide. The position term is spread over the ``N`` places of the second
    factor, so it carries weight ``lam / N``.
    """
    rk, ck = divmod(k, grid_w)
    rl, cl = divmod(l, grid_w)
    d = ca.offsets.index().get((cl - ck, rl - rk))
    adj = ca.table[i, j, d] if d is not None else 0.0
    return (1.0 - lam) * adj + (lam / N) * cp.table[i, k]


__all__ = [
    "QAPProblem", "SolverConfig", "GAStats", "SOLVERS",
    "objective", "swap_delta", "lawler_coefficient",
    "random_layout", "hill_climb", "hill_climb_full_recompute", "simulated_annealing",
    "brute_force_solve", "count_arrangements", "multiset_permutations",
    "crossover", "similarity", "ga_hc_solve", "solve",
]
