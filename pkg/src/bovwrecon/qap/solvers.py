"""Layout solvers: random, hill climbing, simulated annealing, exhaustive, GA + hill climbing."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from ..costs import AdjacencyCost, PositionCost
from ..errors import InvalidInputError, SizeError
from ..pipeline import Layout, SamplingSpec, histogram_to_instances
from .problem import QAPProblem

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 10 ** 7
_BATCH = 1 << 15


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.8
    population: int = 100
    replace_prob: float = 0.2
    seed: int = 0
    max_generations: int = 10000
    convergence_eps: float = 1e-9
    sa_t0: float = 1.0
    sa_decay: float = 0.999
    sa_iters: int = 200000
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError(f"lambda={self.lam} outside [0, 1]")
        if not 0.0 < self.replace_prob < 1.0:
            raise InvalidInputError("replace_prob must lie strictly between 0 and 1")
        if self.population < 2:
            raise InvalidInputError("population must be >= 2")
        if self.max_generations < 0 or self.sa_iters < 0:
            raise InvalidInputError("iteration counts must be non-negative")
        if self.sa_t0 <= 0 or not 0 < self.sa_decay <= 1:
            raise InvalidInputError("bad annealing schedule")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


def _check_hist(hist, shape) -> np.ndarray:
    hist = np.asarray(hist, dtype=np.int64)
    n = int(shape[0]) * int(shape[1])
    if hist.ndim != 1 or (hist.size and hist.min() < 0):
        raise InvalidInputError("histogram must be a 1-D vector of non-negative counts")
    if int(hist.sum()) != n:
        raise InvalidInputError(f"histogram sums to {int(hist.sum())}, grid has {n} cells")
    return hist


def _layout(x: np.ndarray, shape, sampling: SamplingSpec) -> Layout:
    return Layout(np.asarray(x, dtype=np.int64).reshape(shape).copy(), sampling)


def _random_flat(hist: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = histogram_to_instances(hist)
    rng.shuffle(x)
    return x


def random_layout(hist, shape: Tuple[int, int], seed: int, sampling: SamplingSpec = SamplingSpec()) -> Layout:
    """Uniformly random placement of the histogram's word instances on the grid."""
    hist = _check_hist(hist, shape)
    return _layout(_random_flat(hist, np.random.default_rng(seed)), shape, sampling)


# -- hill climbing -----------------------------------------------------------

def _hill_climb_flat(prob: QAPProblem, x: np.ndarray, eps: float, max_steps: Optional[int] = None) -> np.ndarray:
    x = np.array(x, dtype=np.int64)
    prob.hill_climb_inplace(x, eps, max_steps)
    return x


def hill_climb(layout: Layout, ca: AdjacencyCost, cp: PositionCost, lam: float,
               eps: float = 1e-9, max_steps: Optional[int] = None) -> Layout:
    """Best-improvement 2-swap descent until no swap improves by more than ``eps``."""
    prob = QAPProblem(layout.shape, ca, cp, lam)
    x = prob.check(layout.flat)
    return _layout(_hill_climb_flat(prob, x, eps, max_steps), layout.shape, layout.sampling)


def hill_climb_full_recompute(layout: Layout, ca: AdjacencyCost, cp: PositionCost, lam: float,
                              eps: float = 1e-9, max_steps: Optional[int] = None) -> Layout:
    """Reference hill climber that re-evaluates the whole objective for every candidate swap.

    Same move rule and tie-breaking as :func:`hill_climb`; only useful as a
    correctness and speed baseline.
    """
    prob = QAPProblem(layout.shape, ca, cp, lam)
    x = prob.check(layout.flat).copy()
    n = prob.N
    steps = 0
    while max_steps is None or steps < max_steps:
        base = prob.objective(x)
        best, best_ab = 0.0, None
        for a in range(n):
            for b in range(a + 1, n):
                if x[a] == x[b]:
                    continue
                x[a], x[b] = x[b], x[a]
                delta = prob.objective(x) - base
                x[a], x[b] = x[b], x[a]
                if best_ab is None or delta < best:
                    best, best_ab = delta, (a, b)
        if best_ab is None or not best < -eps:
            break
        a, b = best_ab
        x[a], x[b] = x[b], x[a]
        steps += 1
    return _layout(x, layout.shape, layout.sampling)


# -- simulated annealing -----------------------------------------------------

def _anneal_flat(prob: QAPProblem, x: np.ndarray, cfg: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.array(x, dtype=np.int64)
    if prob.N < 2 or cfg.sa_iters == 0:
        return x
    pairs = rng.integers(0, prob.N, size=(cfg.sa_iters, 2))
    uniforms = rng.random(cfg.sa_iters)
    return prob.anneal(x, pairs, uniforms, cfg.sa_t0, cfg.sa_decay)


def simulated_annealing(hist, shape: Tuple[int, int], ca: AdjacencyCost, cp: PositionCost,
                        config: SolverConfig = SolverConfig(), sampling: SamplingSpec = SamplingSpec()) -> Layout:
    """Random-swap annealing with a geometric schedule; returns the best layout visited."""
    hist = _check_hist(hist, shape)
    prob = QAPProblem(shape, ca, cp, config.lam)
    rng = np.random.default_rng(config.seed)
    x0 = _random_flat(hist, rng)
    return _layout(_anneal_flat(prob, x0, config, rng), shape, sampling)


# -- exhaustive --------------------------------------------------------------

def count_arrangements(hist) -> int:
    hist = [int(h) for h in np.asarray(hist).reshape(-1) if h > 0]
    total = math.factorial(sum(hist))
    for h in hist:
        total //= math.factorial(h)
    return total


def multiset_permutations(items: Sequence[int]) -> Iterator[Tuple[int, ...]]:
    """Distinct permutations of a multiset in lexicographic order."""
    a = sorted(items)
    n = len(a)
    while True:
        yield tuple(a)
        i = n - 2
        while i >= 0 and a[i] >= a[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while a[j] <= a[i]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1:] = reversed(a[i + 1:])


def brute_force_solve(hist, shape: Tuple[int, int], ca: AdjacencyCost, cp: PositionCost, lam: float,
                      sampling: SamplingSpec = SamplingSpec(), limit: int = BRUTE_FORCE_LIMIT) -> Layout:
    """Global minimizer by enumerating distinct label arrangements.

    Ties resolve to the lexicographically smallest flattened label grid.
    """
    hist = _check_hist(hist, shape)
    count = count_arrangements(hist)
    if count > limit:
        raise SizeError(f"{count} distinct arrangements exceed the brute-force limit {limit}")
    prob = QAPProblem(shape, ca, cp, lam)
    best_val, best_x = math.inf, None
    gen = multiset_permutations(histogram_to_instances(hist).tolist())
    while True:
        chunk = [p for _, p in zip(range(_BATCH), gen)]
        if not chunk:
            break
        X = np.array(chunk, dtype=np.int64).reshape(len(chunk), prob.N)
        vals = prob.objective_batch(X)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_x = float(vals[i]), X[i].copy()
    return _layout(best_x, shape, sampling)


# -- genetic operators -------------------------------------------------------

def similarity(a: Layout, b: Layout) -> int:
    """Number of cells holding the same label in both layouts."""
    if a.shape != b.shape:
        raise InvalidInputError(f"layout shapes differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a.labels == b.labels))


def _crossover_flat(prob: QAPProblem, xa: np.ndarray, xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    agree = xa == xb
    child = np.where(agree, xa, -1).astype(np.int64)
    remaining = np.bincount(xa, minlength=prob.K) - np.bincount(xa[agree], minlength=prob.K)
    order = rng.permutation(np.flatnonzero(~agree)).astype(np.int64)
    prob.greedy_fill(child, agree.copy(), remaining.astype(np.int64), order)
    return child


def crossover(parent_a: Layout, parent_b: Layout, rng: np.random.Generator,
              ca: AdjacencyCost, cp: PositionCost, lam: float) -> Layout:
    """Keep the cells both parents agree on, fill the rest greedily in random cell order.

    Each open cell takes the still-available label with the smallest cost
    against already-filled neighbors plus its position cost.
    """
    if parent_a.shape != parent_b.shape:
        raise InvalidInputError("parents have different shapes")
    prob = QAPProblem(parent_a.shape, ca, cp, lam)
    xa, xb = prob.check(parent_a.flat), prob.check(parent_b.flat)
    if not np.array_equal(np.bincount(xa, minlength=prob.K), np.bincount(xb, minlength=prob.K)):
        raise InvalidInputError("parents do not pool to the same histogram")
    return _layout(_crossover_flat(prob, xa, xb, rng), parent_a.shape, parent_a.sampling)


# -- GA + HC -----------------------------------------------------------------

@dataclass
class GAStats:
    generations: int = 0
    accepted: int = 0
    initial_best: float = math.inf
    final_best: float = math.inf
    converged: bool = False


def _init_member(prob: QAPProblem, hist: np.ndarray, seed: int, idx: int, eps: float) -> np.ndarray:
    rng = np.random.default_rng([seed, 0, idx])
    return _hill_climb_flat(prob, _random_flat(hist, rng), eps)


def ga_hc_solve(hist, shape: Tuple[int, int], ca: AdjacencyCost, cp: PositionCost,
                config: SolverConfig = SolverConfig(), sampling: SamplingSpec = SamplingSpec(),
                stats: Optional[GAStats] = None) -> Layout:
    """Population search: hill-climbed random starts, crossover children, diversity-aware replacement.

    Each generation breeds one child from two distinct random members and hill
    climbs it. A child better than the current worst member joins the
    population; then, with probability ``replace_prob``, the worse member of the
    most similar pair leaves, otherwise the worst member leaves. Stops when the
    best and worst objectives are within ``convergence_eps`` or after
    ``max_generations`` generations.
    """
    hist = _check_hist(hist, shape)
    prob = QAPProblem(shape, ca, cp, config.lam)
    eps = config.convergence_eps
    n_p = config.population
    seed = config.seed

    init = lambda i: _init_member(prob, hist, seed, i, eps)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            members = list(ex.map(init, range(n_p)))
    else:
        members = [init(i) for i in range(n_p)]
    pop = np.array(members, dtype=np.int64).reshape(n_p, prob.N)
    obj = prob.objective_batch(pop)
    sim = (pop[:, None, :] == pop[None, :, :]).sum(axis=2)
    np.fill_diagonal(sim, -1)

    st = stats if stats is not None else GAStats()
    st.initial_best = float(obj.min())
    rng = np.random.default_rng([seed, 1])
    gen = 0
    while gen < config.max_generations and obj.max() - obj.min() >= eps:
        gen += 1
        i1, i2 = rng.choice(n_p, size=2, replace=False)
        child = _crossover_flat(prob, pop[i1], pop[i2], rng)
        child = _hill_climb_flat(prob, child, eps)
        c_val = prob.objective(child)
        worst = int(np.argmax(obj))
        if not c_val < obj[worst]:
            continue
        st.accepted += 1
        c_sim = (pop == child).sum(axis=1)
        if rng.random() < config.replace_prob:
            victim = _most_similar_victim(sim, c_sim, obj, c_val)
        else:
            victim = worst
        if victim == n_p:
            continue  # the child itself leaves
        pop[victim] = child
        obj[victim] = c_val
        c_sim[victim] = -1
        sim[victim, :] = c_sim
        sim[:, victim] = c_sim
    st.generations = gen
    st.converged = bool(obj.max() - obj.min() < eps)
    best = int(np.argmin(obj))
    st.final_best = float(obj[best])
    log.debug("ga+hc: %d generations, %d accepted, best %.6f", gen, st.accepted, st.final_best)
    return _layout(pop[best], shape, sampling)


def _most_similar_victim(sim: np.ndarray, c_sim: np.ndarray, obj: np.ndarray, c_val: float) -> int:
    """Index (population size = the child) of the worse member of the most similar pair."""
    n_p = sim.shape[0]
    ext = np.empty((n_p + 1, n_p + 1), dtype=sim.dtype)
    ext[:n_p, :n_p] = sim
    ext[n_p, :n_p] = c_sim
    ext[:n_p, n_p] = c_sim
    ext[n_p, n_p] = -1
    iu = np.triu_indices(n_p + 1, 1)
    flat = ext[iu]
    k = int(np.argmax(flat))
    u, v = int(iu[0][k]), int(iu[1][k])
    ou = obj[u] if u < n_p else c_val
    ov = obj[v] if v < n_p else c_val
    # equal objectives: drop the later entry
    return u if ou > ov else v


# -- dispatch ----------------------------------------------------------------

SOLVERS = ("rand", "hc", "sa", "gahc", "brute")


def solve(name: str, hist, shape: Tuple[int, int], ca: AdjacencyCost, cp: PositionCost,
          config: SolverConfig = SolverConfig(), sampling: SamplingSpec = SamplingSpec()) -> Layout:
    if name == "rand":
        return random_layout(hist, shape, config.seed, sampling)
    if name == "hc":
        start = random_layout(hist, shape, config.seed, sampling)
        return hill_climb(start, ca, cp, config.lam, config.convergence_eps)
    if name == "sa":
        return simulated_annealing(hist, shape, ca, cp, config, sampling)
    if name == "gahc":
        return ga_hc_solve(hist, shape, ca, cp, config, sampling)
    if name == "brute":
        return brute_force_solve(hist, shape, ca, cp, config.lam, sampling)
    raise InvalidInputError(f"unknown solver {name!r}; choose from {', '.join(SOLVERS)}")
