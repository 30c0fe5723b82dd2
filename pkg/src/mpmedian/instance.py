"""Problem data model for the multi-period p-median task.

An instance is a set of N nodes in the unit square that act both as demand
points and candidate facility sites, per-period demand weights, and a
per-period facility quota p_t. A solution opens exactly p_t facilities in
each period; every customer is served by its nearest open facility, so the
objective is

    sum_t sum_i w[t, i] * min_{j in open_t} dist(i, j)

Periods are coupled only through the shared node set: the objective
decomposes across t, which the oracle and the heuristics exploit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Full N x N distance matrices are only cached below this node count.
DISTANCE_CACHE_LIMIT = 2000

# Demand weights are drawn from this band: strictly positive so no period
# degenerates to zero demand, wide enough to give temporal variation.
WEIGHT_LOW = 0.5
WEIGHT_HIGH = 1.5


class SchemaError(ValueError):
    """A serialized instance or solution file is malformed."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Size parameters of an instance family."""

    name: str
    n_nodes: int
    n_periods: int
    median_choices: tuple[int, ...]
    service_radius: float | None = None
    discount_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_periods < 1:
            raise ValueError("scenario needs n_nodes >= 1 and n_periods >= 1")
        if not self.median_choices:
            raise ValueError("median_choices must be nonempty")
        if max(self.median_choices) > self.n_nodes:
            raise ValueError(
                f"median choice {max(self.median_choices)} exceeds n_nodes={self.n_nodes}"
            )


SCENARIOS: dict[str, ScenarioSpec] = {
    "Small": ScenarioSpec("Small", 20, 3, (2, 3, 4), 0.32, (0.12, 0.2)),
    "Medium": ScenarioSpec("Medium", 50, 5, (2, 3, 4, 6, 8), 0.24, (0.12, 0.2)),
    "Large": ScenarioSpec("Large", 100, 7, (2, 4, 7, 9, 10, 13, 15), 0.16, (0.12, 0.2)),
    "X-Large": ScenarioSpec("X-Large", 500, 9, (9, 10, 13, 15, 17, 19), 0.08, (0.12, 0.2)),
    "XX-Large": ScenarioSpec(
        "XX-Large", 1000, 11, (9, 10, 13, 15, 17, 19, 21, 25), 0.05, (0.12, 0.2)
    ),
}


@dataclass
class ProblemInstance:
    """One multi-period p-median instance.

    nodes:      [N, 2] float64 coordinates in the unit square.
    weights:    [T, N] float64 nonnegative demand per period per node.
    p_schedule: length-T facility quota, 1 <= p_t <= N.
    service_radius / discount_rate: recorded scenario metadata; neither
        enters the cost (no objective or constraint uses them).
    """

    id: str
    seed: int
    nodes: np.ndarray
    weights: np.ndarray
    p_schedule: tuple[int, ...]
    service_radius: float | None = None
    discount_rate: float | None = None
    _dist_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.p_schedule = tuple(int(p) for p in self.p_schedule)
        self.check()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_periods(self) -> int:
        return len(self.p_schedule)

    def check(self) -> None:
        """Raise ValueError on any violated instance invariant."""
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError(f"nodes must be [N, 2], got {self.nodes.shape}")
        n = self.n_nodes
        if n < 1:
            raise ValueError("instance needs at least one node")
        if np.any(self.nodes < 0.0) or np.any(self.nodes > 1.0):
            raise ValueError("coordinates must lie in the unit square")
        if self.weights.shape != (self.n_periods, n):
            raise ValueError(
                f"weights must be [T={self.n_periods}, N={n}], got {self.weights.shape}"
            )
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if np.any(self.weights.sum(axis=1) <= 0.0):
            raise ValueError("every period needs at least one positive weight")
        for t, p in enumerate(self.p_schedule):
            if not 1 <= p <= n:
                raise ValueError(f"p_schedule[{t}]={p} outside [1, {n}]")
        if self.service_radius is not None and self.service_radius < 0:
            raise ValueError("service_radius must be nonnegative")

    def distance_matrix(self) -> np.ndarray:
        """Full pairwise Euclidean distances, cached up to the memory guard."""
        if self.n_nodes > DISTANCE_CACHE_LIMIT:
            raise ValueError(
                f"refusing to materialize {self.n_nodes}x{self.n_nodes} distance matrix "
                f"(cache limit {DISTANCE_CACHE_LIMIT}); compute distances on demand"
            )
        if self._dist_cache is None:
            diff = self.nodes[:, None, :] - self.nodes[None, :, :]
            self._dist_cache = np.sqrt((diff * diff).sum(axis=2))
        return self._dist_cache

    def distances_to(self, facility_idx: Sequence[int]) -> np.ndarray:
        """[N, len(facility_idx)] distances from every node to the given sites."""
        idx = np.asarray(facility_idx, dtype=np.int64)
        diff = self.nodes[:, None, :] - self.nodes[None, idx, :]
        return np.sqrt((diff * diff).sum(axis=2))

    def copy(self) -> "ProblemInstance":
        return replace(
            self, nodes=self.nodes.copy(), weights=self.weights.copy(), _dist_cache=None
        )


@dataclass
class Solution:
    """Per-period facility index sets plus the cached objective value.

    `facilities` is stored exactly as constructed (validate() reports
    duplicates or bad indices instead of silently normalizing them).
    Metadata fields ride along for the solution file schema.
    """

    facilities: tuple[tuple[int, ...], ...]
    cost: float
    instance_id: str = ""
    solver: str = ""
    runtime_s: float = 0.0

    def __post_init__(self):
        self.facilities = tuple(tuple(int(j) for j in period) for period in self.facilities)
        self.cost = float(self.cost)


@dataclass(frozen=True)
class Violation:
    """One violated solution invariant, locatable by period."""

    kind: str  # "period_count" | "cardinality" | "out_of_range" | "duplicate" | "cost"
    period: int | None
    detail: str


def evaluate_cost(instance: ProblemInstance, facilities: Sequence[Iterable[int]]) -> float:
    """Total weighted distance from every node to its nearest open facility.

    Accepts any per-period nonempty sets of valid indices (the cardinality
    constraint is validate()'s job, and monotonicity checks evaluate
    oversized sets on purpose). Assignment variables are never materialized:
    for fixed open sets, serving each customer from its nearest open
    facility is optimal, so the min is the exact objective.
    """
    if len(facilities) != instance.n_periods:
        raise ValueError(
            f"facilities has {len(facilities)} periods, instance has {instance.n_periods}"
        )
    n = instance.n_nodes
    total = 0.0
    for t, period_fac in enumerate(facilities):
        idx = np.asarray(sorted(set(int(j) for j in period_fac)), dtype=np.int64)
        if idx.size == 0:
            raise ValueError(f"empty facility set in period {t}")
        if idx[0] < 0 or idx[-1] >= n:
            raise ValueError(f"facility index out of range in period {t}")
        if instance._dist_cache is not None:
            nearest = instance._dist_cache[:, idx].min(axis=1)
        else:
            nearest = instance.distances_to(idx).min(axis=1)
        total += float(instance.weights[t] @ nearest)
    return total


def validate(instance: ProblemInstance, solution: Solution) -> list[Violation]:
    """Report every violated solution invariant; empty list means ok."""
    violations: list[Violation] = []
    if len(solution.facilities) != instance.n_periods:
        violations.append(
            Violation(
                "period_count",
                None,
                f"solution has {len(solution.facilities)} periods, "
                f"instance has {instance.n_periods}",
            )
        )
        return violations
    n = instance.n_nodes
    for t, period_fac in enumerate(solution.facilities):
        p_t = instance.p_schedule[t]
        if len(period_fac) != p_t:
            violations.append(
                Violation("cardinality", t, f"|facilities[{t}]| = {len(period_fac)}, p_t = {p_t}")
            )
        seen: set[int] = set()
        for j in period_fac:
            if not 0 <= j < n:
                violations.append(Violation("out_of_range", t, f"index {j} outside [0, {n})"))
            elif j in seen:
                violations.append(Violation("duplicate", t, f"index {j} repeated"))
            seen.add(j)
    return violations


def generate_instance(scale: str | ScenarioSpec, seed: int) -> ProblemInstance:
    """Draw one instance: uniform coordinates, uniform weights, uniform p_t.

    Deterministic given (scale, seed). Draw order is fixed (coordinates,
    weights, p_schedule, discount rate) so corpora are stable across
    versions.
    """
    if isinstance(scale, str):
        if scale not in SCENARIOS:
            raise ValueError(f"unknown scenario {scale!r}; known: {sorted(SCENARIOS)}")
        spec = SCENARIOS[scale]
    else:
        spec = scale
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(0.0, 1.0, size=(spec.n_nodes, 2))
    weights = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=(spec.n_periods, spec.n_nodes))
    medians = np.asarray(spec.median_choices, dtype=np.int64)
    p_schedule = tuple(int(p) for p in medians[rng.integers(0, len(medians), size=spec.n_periods)])
    discount = None
    if spec.discount_range is not None:
        discount = float(rng.uniform(*spec.discount_range))
    return ProblemInstance(
        id=f"{spec.name}-{seed}",
        seed=seed,
        nodes=nodes,
        weights=weights,
        p_schedule=p_schedule,
        service_radius=spec.service_radius,
        discount_rate=discount,
    )


def knn_neighbors(instance: ProblemInstance, k: int) -> np.ndarray:
    """[N, min(k, N-1)] nearest-neighbor indices per node, self excluded.

    Rows are sorted by nondecreasing distance; exact ties break toward the
    lower index. Brute-force O(N^2) scan below the matrix cache limit, a
    grid-bucket search above it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = instance.n_nodes
    k_eff = min(k, n - 1)
    if k_eff == 0:
        return np.zeros((n, 0), dtype=np.int64)
    if n <= DISTANCE_CACHE_LIMIT:
        dist = instance.distance_matrix().copy()
        np.fill_diagonal(dist, np.inf)
        # stable sort keeps lower indices first on exact ties
        order = np.argsort(dist, axis=1, kind="stable")
        return order[:, :k_eff].astype(np.int64)
    return _knn_grid(instance.nodes, k_eff)


def _knn_grid(nodes: np.ndarray, k: int) -> np.ndarray:
    """Grid-bucket K-NN for large N: expand cell rings until the k-th best
    distance beats the nearest possible point of any unexplored ring."""
    n = nodes.shape[0]
    cells = max(1, int(math.sqrt(n / 4.0)))
    cell_size = 1.0 / cells
    cx = np.minimum((nodes[:, 0] / cell_size).astype(np.int64), cells - 1)
    cy = np.minimum((nodes[:, 1] / cell_size).astype(np.int64), cells - 1)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i in range(n):
        buckets.setdefault((int(cx[i]), int(cy[i])), []).append(i)

    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        found: list[tuple[float, int]] = []
        ring = 0
        while True:
            ring_members: list[int] = []
            for gx in range(cx[i] - ring, cx[i] + ring + 1):
                for gy in range(cy[i] - ring, cy[i] + ring + 1):
                    if max(abs(gx - cx[i]), abs(gy - cy[i])) != ring:
                        continue
                    ring_members.extend(buckets.get((gx, gy), ()))
            for j in ring_members:
                if j != i:
                    d = math.hypot(nodes[i, 0] - nodes[j, 0], nodes[i, 1] - nodes[j, 1])
                    found.append((d, j))
            # nearest possible distance of the next ring
            next_bound = ring * cell_size
            if len(found) >= k:
                found.sort()
                if found[k - 1][0] <= next_bound:
                    break
            if ring > 2 * cells:
                break
            ring += 1
        found.sort()
        out[i] = [j for _, j in found[:k]]
    return out


# ---------------------------------------------------------------------------
# JSON file formats
# ---------------------------------------------------------------------------

_INSTANCE_FIELDS = ("id", "seed", "nodes", "weights", "p_schedule")
_SOLUTION_FIELDS = ("instance_id", "facilities", "cost")


def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "id": instance.id,
        "seed": instance.seed,
        "nodes": instance.nodes.tolist(),
        "weights": instance.weights.tolist(),
        "p_schedule": list(instance.p_schedule),
        "service_radius": instance.service_radius,
        "discount_rate": instance.discount_rate,
    }


def instance_from_dict(payload: dict) -> ProblemInstance:
    for key in _INSTANCE_FIELDS:
        if key not in payload:
            raise SchemaError(f"instance file missing field {key!r}")
    try:
        inst = ProblemInstance(
            id=str(payload["id"]),
            seed=int(payload["seed"]),
            nodes=np.asarray(payload["nodes"], dtype=np.float64),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            p_schedule=tuple(payload["p_schedule"]),
            service_radius=payload.get("service_radius"),
            discount_rate=payload.get("discount_rate"),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid instance payload: {exc}") from exc
    return inst


def save_instance(instance: ProblemInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance)))


def load_instance(path: str | Path) -> ProblemInstance:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {path}") from exc
    if not isinstance(payload, dict):
        raise SchemaError("instance file must hold a JSON object")
    return instance_from_dict(payload)


def solution_to_dict(solution: Solution) -> dict:
    return {
        "instance_id": solution.instance_id,
        "facilities": [list(period) for period in solution.facilities],
        "cost": solution.cost,
        "solver": solution.solver,
        "runtime_s": solution.runtime_s,
    }


def solution_from_dict(payload: dict) -> Solution:
    for key in _SOLUTION_FIELDS:
        if key not in payload:
            raise SchemaError(f"solution file missing field {key!r}")
    try:
        return Solution(
            facilities=tuple(tuple(int(j) for j in period) for period in payload["facilities"]),
            cost=float(payload["cost"]),
            instance_id=str(payload["instance_id"]),
            solver=str(payload.get("solver", "")),
            runtime_s=float(payload.get("runtime_s", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid solution payload: {exc}") from exc


def save_solution(solution: Solution, path: str | Path) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(solution)))


def load_solution(path: str | Path) -> Solution:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {path}") from exc
    if not isinstance(payload, dict):
        raise SchemaError("solution file must hold a JSON object")
    return solution_from_dict(payload)
