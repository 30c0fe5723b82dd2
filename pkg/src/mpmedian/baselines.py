"""Exact oracle and classical heuristics for gap computation.

All solvers treat periods independently (the objective decomposes and no
constraint couples periods), and all are pure functions of
(instance, params, seed).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .instance import ProblemInstance, Solution, evaluate_cost

DEFAULT_COMBINATION_CAP = 2_000_000
_ENUM_CHUNK = 8192


class SearchSpaceError(ValueError):
    """Exhaustive enumeration refused: the search space exceeds the cap."""


@dataclass(frozen=True)
class SAParams:
    """Simulated annealing schedule.

    Defaults (when built via `default_sa_params`) scale with the instance:
    initial temperature is 10% of a random solution's cost, geometric
    cooling at 0.97, 100*N proposals per temperature level, floor at
    1e-4 of the initial temperature.
    """

    initial_temperature: float
    cooling_factor: float = 0.97
    steps_per_temperature: int = 100
    min_temperature: float = 1e-4

    def __post_init__(self):
        if self.initial_temperature <= 0:
            raise ValueError("initial_temperature must be positive")
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if self.min_temperature <= 0 or self.min_temperature >= self.initial_temperature:
            raise ValueError("need 0 < min_temperature < initial_temperature")
        if self.steps_per_temperature < 0:
            raise ValueError("steps_per_temperature must be nonnegative")


def _period_cost(weights_t: np.ndarray, dist: np.ndarray, fac: np.ndarray) -> float:
    return float(weights_t @ dist[:, fac].min(axis=1))


def brute_force_optimal(
    instance: ProblemInstance, max_combinations_per_period: int = DEFAULT_COMBINATION_CAP
) -> Solution:
    """Exact optimum by per-period exhaustive enumeration.

    Combinations are visited in lexicographic index order and only strict
    improvements replace the incumbent, so the first lexicographic optimum
    wins under cost ties. Refuses (never silently approximates) when
    C(N, p_t) exceeds the cap for any period.
    """
    n = instance.n_nodes
    for t, p in enumerate(instance.p_schedule):
        n_comb = math.comb(n, p)
        if n_comb > max_combinations_per_period:
            raise SearchSpaceError(
                f"period {t}: C({n}, {p}) = {n_comb} exceeds cap {max_combinations_per_period}"
            )
    dist = instance.distance_matrix()
    facilities: list[tuple[int, ...]] = []
    for t, p in enumerate(instance.p_schedule):
        w = instance.weights[t]
        best_cost = np.inf
        best_fac: tuple[int, ...] | None = None
        combos = itertools.combinations(range(n), p)
        while True:
            chunk = list(itertools.islice(combos, _ENUM_CHUNK))
            if not chunk:
                break
            idx = np.asarray(chunk, dtype=np.int64)  # [M, p]
            costs = w @ dist[:, idx].min(axis=2)  # [N, M, p] -> [N, M] -> [M]
            m = int(np.argmin(costs))
            if costs[m] < best_cost:
                best_cost = float(costs[m])
                best_fac = chunk[m]
        assert best_fac is not None
        facilities.append(best_fac)
    cost = evaluate_cost(instance, facilities)
    return Solution(tuple(facilities), cost, instance_id=instance.id, solver="oracle")


def random_solution(instance: ProblemInstance, rng: np.random.Generator) -> Solution:
    """Uniformly random feasible facility sets per period."""
    facilities = tuple(
        tuple(sorted(int(j) for j in rng.choice(instance.n_nodes, size=p, replace=False)))
        for p in instance.p_schedule
    )
    return Solution(
        facilities, evaluate_cost(instance, facilities), instance_id=instance.id, solver="random"
    )


def teitz_bart(instance: ProblemInstance, rng: np.random.Generator) -> Solution:
    """Vertex-substitution local search, best improvement per pass.

    Per period: start from a uniformly random feasible set and apply the
    single best strictly improving (open, closed) swap until no swap
    improves. The result is 1-swap locally optimal; each accepted swap
    strictly decreases the period cost, so the loop terminates.
    """
    n = instance.n_nodes
    dist = instance.distance_matrix()
    facilities: list[tuple[int, ...]] = []
    for t, p in enumerate(instance.p_schedule):
        w = instance.weights[t]
        current = sorted(int(j) for j in rng.choice(n, size=p, replace=False))
        cost = _period_cost(w, dist, np.asarray(current))
        while True:
            best_delta = 0.0
            best_swap: tuple[int, int] | None = None
            closed = np.asarray([j for j in range(n) if j not in set(current)], dtype=np.int64)
            if closed.size == 0:
                break  # p == n, nothing to swap in
            for out_pos, j_out in enumerate(current):
                keep = [j for j in current if j != j_out]
                if keep:
                    rest_min = dist[:, keep].min(axis=1)
                else:
                    rest_min = np.full(n, np.inf)
                cand_costs = w @ np.minimum(rest_min[:, None], dist[:, closed])
                m = int(np.argmin(cand_costs))
                delta = float(cand_costs[m]) - cost
                if delta < best_delta - 1e-15:
                    best_delta = delta
                    best_swap = (j_out, int(closed[m]))
            if best_swap is None:
                break
            j_out, j_in = best_swap
            current = sorted([j for j in current if j != j_out] + [j_in])
            cost += best_delta
        facilities.append(tuple(current))
    cost = evaluate_cost(instance, facilities)
    return Solution(tuple(facilities), cost, instance_id=instance.id, solver="teitz-bart")


def default_sa_params(instance: ProblemInstance, rng: np.random.Generator) -> SAParams:
    """Instance-scaled schedule: T0 = 10% of a random solution's cost."""
    t0 = 0.1 * random_solution(instance, rng).cost
    t0 = max(t0, 1e-9)
    return SAParams(
        initial_temperature=t0,
        cooling_factor=0.97,
        steps_per_temperature=100 * instance.n_nodes,
        min_temperature=1e-4 * t0,
    )


class _PeriodChain:
    """One period's open set with nearest/second-nearest bookkeeping, so a
    swap proposal costs O(N) instead of O(N*p)."""

    __slots__ = ("dist", "w", "open_sites", "open_flags", "cols", "rest_by_pos", "cost")

    def __init__(self, dist: np.ndarray, w: np.ndarray, open_sites: list[int]):
        self.dist = dist
        self.w = w
        self.open_sites = open_sites  # positional, aligned with cols
        self.open_flags = bytearray(dist.shape[0])
        for j in open_sites:
            self.open_flags[j] = 1
        self.cols = dist[:, open_sites].copy()
        self._rebuild()

    def _rebuild(self) -> None:
        n, p = self.cols.shape
        pos1 = self.cols.argmin(axis=1)
        rows = np.arange(n)
        min1 = self.cols[rows, pos1]
        if p > 1:
            spoiled = self.cols.copy()
            spoiled[rows, pos1] = np.inf
            min2 = spoiled.min(axis=1)
        else:
            min2 = np.full(n, np.inf)
        # per removal position, the nearest-open distance without it
        self.rest_by_pos = [np.where(pos1 == op, min2, min1) for op in range(p)]
        self.cost = float(self.w @ min1)

    def propose(self, out_pos: int, j_in: int, buf: np.ndarray) -> float:
        np.minimum(self.rest_by_pos[out_pos], self.dist[:, j_in], out=buf)
        return float(self.w @ buf)

    def accept(self, out_pos: int, j_in: int) -> None:
        self.open_flags[self.open_sites[out_pos]] = 0
        self.open_flags[j_in] = 1
        self.open_sites[out_pos] = j_in
        self.cols[:, out_pos] = self.dist[:, j_in]
        self._rebuild()


def simulated_annealing(
    instance: ProblemInstance,
    params: SAParams | None,
    rng: np.random.Generator,
) -> Solution:
    """Metropolis search over single-facility replacements.

    A proposal replaces one open facility with one closed node in a
    uniformly random period; acceptance probability exp(-delta/temperature);
    geometric cooling. Returns the best solution ever visited, not the
    final chain state. RNG draws are consumed in per-level blocks.
    """
    if params is None:
        params = default_sa_params(instance, rng)
    n = instance.n_nodes
    dist = instance.distance_matrix()
    exp = math.exp

    chains = [
        _PeriodChain(
            dist,
            instance.weights[t],
            [int(j) for j in rng.choice(n, size=p, replace=False)],
        )
        for t, p in enumerate(instance.p_schedule)
    ]
    best = [sorted(c.open_sites) for c in chains]
    best_cost = sum(c.cost for c in chains)

    swap_chains = [chains[t] for t in range(instance.n_periods) if instance.p_schedule[t] < n]
    temp = params.initial_temperature
    steps = params.steps_per_temperature
    buf = np.empty(n)
    if swap_chains and steps > 0:
        while temp >= params.min_temperature:
            chain_draw = rng.integers(0, len(swap_chains), size=steps).tolist()
            pos_draw = rng.random(steps).tolist()
            jin_draw = rng.integers(0, n, size=steps).tolist()
            acc_draw = rng.random(steps).tolist()
            for s in range(steps):
                chain = swap_chains[chain_draw[s]]
                out_pos = int(pos_draw[s] * len(chain.open_sites))
                j_in = jin_draw[s]
                flags = chain.open_flags
                while flags[j_in]:
                    j_in = int(rng.integers(0, n))
                new_cost = chain.propose(out_pos, j_in, buf)
                delta = new_cost - chain.cost
                if delta < 0 or acc_draw[s] < exp(-delta / temp):
                    chain.accept(out_pos, j_in)
                    total = sum(c.cost for c in chains)
                    if total < best_cost:
                        best_cost = total
                        best = [sorted(c.open_sites) for c in chains]
            temp *= params.cooling_factor

    facilities = tuple(tuple(s) for s in best)
    cost = evaluate_cost(instance, facilities)
    return Solution(facilities, cost, instance_id=instance.id, solver="sa")
