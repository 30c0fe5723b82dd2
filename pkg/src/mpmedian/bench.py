"""Benchmark harness: manifests, gap tables, scaling sweeps, ablations,
memory diagnostics, and the gradient verification suite.

Every command that emits artifacts writes a run manifest first and tags
each CSV with a `# manifest: <file>` comment line, so any table can be
traced back to the exact seeds and configuration that produced it. Timing
columns measure solve time only (never instance or model loading).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .baselines import (
    SAParams,
    brute_force_optimal,
    random_solution,
    simulated_annealing,
    teitz_bart,
)
from .config import EncoderConfig, PolicyConfig, TrainConfig
from .decoder import decode_batch, memory_diagnostics
from .encoder import encode_batch
from .instance import ProblemInstance, ScenarioSpec, generate_instance
from .model import Policy, randomize_gate_params
from .trainer import DecodeMode, evaluate_policy

WORKERS_ENV = "MPMEDIAN_WORKERS"

GAP_TABLE_COLUMNS = ("Algorithm", "Obj.", "Gap(%)", "Time(s)", "Ref")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _pool_map(fn: Callable, items: Sequence, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(items))) as pool:
        return pool.map(fn, items)


@dataclass
class RunManifest:
    """Reproducibility record written next to every artifact set."""

    command: list[str]
    config: dict
    seeds: dict
    artifacts: list[str] = field(default_factory=list)
    created_unix: float = field(default_factory=time.time)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def write(self, out_dir: str | Path, name: str = "manifest.json") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        payload = dataclasses.asdict(self)
        payload["config_hash"] = self.config_hash
        path.write_text(json.dumps(payload, indent=1))
        return path


def write_csv(
    path: str | Path, header: Sequence[str], rows: Sequence[Sequence], manifest: Path | None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if manifest is not None:
            fh.write(f"# manifest: {manifest.name}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a harness CSV, skipping `#` comment lines."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("".join(lines))))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# classical solver rows + gap table
# ---------------------------------------------------------------------------

_SOLVER_FNS = {
    "oracle": lambda inst, rng: brute_force_optimal(inst),
    "teitz-bart": teitz_bart,
    "sa": lambda inst, rng: simulated_annealing(inst, None, rng),
    "random": random_solution,
}


def solve_classical(
    solver: str, instance: ProblemInstance, seed: int = 0
) -> tuple[object, float]:
    """Run one classical solver; returns (Solution, solve seconds)."""
    if solver not in _SOLVER_FNS:
        raise ValueError(f"unknown solver {solver!r}; known: {sorted(_SOLVER_FNS)}")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    sol = _SOLVER_FNS[solver](instance, rng)
    return sol, time.perf_counter() - t0


def classical_rows(
    solvers: Sequence[str],
    instances: Sequence[ProblemInstance],
    references: dict[str, float],
    seed: int = 0,
) -> list[dict]:
    rows = []
    for inst in instances:
        for solver in solvers:
            sol, elapsed = solve_classical(solver, inst, seed=seed)
            ref = references.get(inst.id)
            gap = None if ref is None else 100.0 * (sol.cost - ref) / ref
            rows.append(
                {
                    "instance_id": inst.id,
                    "algorithm": solver,
                    "obj": sol.cost,
                    "ref": ref,
                    "gap_pct": gap,
                    "time_s": elapsed,
                }
            )
    return rows


def gap_table(rows: Sequence[dict], strict: bool = True) -> list[list]:
    """Aggregate per-instance rows into solver-level means.

    Output columns: Algorithm, Obj., Gap(%), Time(s), Ref. Rows whose
    reference is missing aggregate with Ref = 'best-known' (gap computed
    against the per-instance best objective in the row set); with
    strict=True an instance with no reference and no best-known fallback
    is an error rather than a silent drop.
    """
    rows = list(rows)
    if not rows:
        return []
    best_known: dict[str, float] = {}
    for row in rows:
        iid = row["instance_id"]
        best_known[iid] = min(best_known.get(iid, math.inf), row["obj"])
    missing_ref = {r["instance_id"] for r in rows if r["ref"] is None}
    if missing_ref and strict and not best_known:
        raise ValueError(f"instances without reference costs: {sorted(missing_ref)}")

    by_algo: dict[str, list[dict]] = {}
    for row in rows:
        by_algo.setdefault(row["algorithm"], []).append(row)
    table = []
    for algo, algo_rows in by_algo.items():
        objs = [r["obj"] for r in algo_rows]
        gaps = []
        kinds = set()
        for r in algo_rows:
            if r["ref"] is not None:
                gaps.append(r["gap_pct"])
                kinds.add("optimal")
            else:
                ref = best_known[r["instance_id"]]
                gaps.append(100.0 * (r["obj"] - ref) / ref)
                kinds.add("best-known")
        ref_kind = "optimal" if kinds == {"optimal"} else "best-known"
        table.append(
            [algo, float(np.mean(objs)), float(np.mean(gaps)), float(np.mean([r["time_s"] for r in algo_rows])), ref_kind]
        )
    return table


# ---------------------------------------------------------------------------
# scaling sweep
# ---------------------------------------------------------------------------


def fit_power_law(sizes: Sequence[int], seconds: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of t = a * N^e on log-log axes -> (a, e)."""
    logs_n = np.log(np.asarray(sizes, dtype=float))
    logs_t = np.log(np.asarray(seconds, dtype=float))
    e, log_a = np.polyfit(logs_n, logs_t, 1)
    return float(np.exp(log_a)), float(e)


def scaling_sweep(
    sizes: Sequence[int],
    k: int = 16,
    n_periods: int = 3,
    p_per_period: int = 5,
    repeats: int = 3,
    seed: int = 0,
    d_h: int = 128,
    n_layers: int = 3,
    n_heads: int = 8,
) -> dict:
    """Greedy inference wall time per instance size with a fixed
    random-parameter model; returns sizes, per-size times, and the fitted
    power-law exponent. Timing covers encode+decode only (single worker)."""
    config = PolicyConfig(
        n_periods=n_periods,
        encoder=EncoderConfig(d_h=d_h, n_heads=n_heads, n_layers=n_layers, k_neighbors=k),
        mem_slots=32,
    )
    policy = Policy.init(config, seed=seed, randomize_gates=True)
    times = []
    for n in sizes:
        spec = ScenarioSpec(f"scale-n{n}", n, n_periods, (p_per_period,))
        samples = []
        for r in range(repeats):
            inst = generate_instance(spec, seed=seed + 1000 * r + n)
            t0 = time.perf_counter()
            policy.solve(inst)
            samples.append(time.perf_counter() - t0)
        times.append(float(np.median(samples)))
    _, exponent = fit_power_law(sizes, times)
    return {"sizes": list(sizes), "seconds": times, "exponent": exponent, "k": k}


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------

ABLATION_ROWS = (
    ("baseline", dict(use_distance_bias=False, knn_sparse=False, use_memory=False)),
    ("+ distance bias", dict(use_distance_bias=True, knn_sparse=False, use_memory=False)),
    ("+ knn sparse", dict(use_distance_bias=True, knn_sparse=True, use_memory=False)),
    ("+ hopfield memory", dict(use_distance_bias=True, knn_sparse=True, use_memory=True)),
    ("+ memory regularization", dict(use_distance_bias=True, knn_sparse=True, use_memory=True)),
)
# the last row differs only in training-time regularizer weights
ABLATION_LAMBDAS = (0.0, 0.0, 0.0, 0.0, 1e-3)


def ablation_configs(base: PolicyConfig) -> list[tuple[str, PolicyConfig, float]]:
    """The progressive toggle matrix; rows are exact code-path subsets of
    the full model (toggles freeze parameters, never fork the graph)."""
    out = []
    for (label, toggles), lam in zip(ABLATION_ROWS, ABLATION_LAMBDAS):
        out.append((label, base.with_toggles(**toggles), lam))
    return out


def ablation_table(
    base: PolicyConfig,
    scenario: ScenarioSpec,
    n_instances: int = 20,
    seed: int = 0,
    references: dict[str, float] | None = None,
) -> list[list]:
    """Greedy cost of each progressive configuration with seeded random
    parameters (gate parameters randomized so toggles are visible)."""
    instances = [generate_instance(scenario, seed=seed + i) for i in range(n_instances)]
    if references is None:
        references = {}
    rows = []
    for label, cfg, lam in ablation_configs(base):
        policy = Policy.init(cfg, seed=seed, randomize_gates=True)
        t0 = time.perf_counter()
        costs = [policy.solve(inst).solution.cost for inst in instances]
        elapsed = (time.perf_counter() - t0) / n_instances
        mean_cost = float(np.mean(costs))
        gaps = [
            100.0 * (c - references[i.id]) / references[i.id]
            for c, i in zip(costs, instances)
            if i.id in references
        ]
        rows.append(
            [
                label,
                mean_cost,
                float(np.mean(gaps)) if gaps else None,
                elapsed,
                lam,
            ]
        )
    return rows


# ---------------------------------------------------------------------------
# memory diagnostics + gradcheck
# ---------------------------------------------------------------------------


def memstats(
    policy: Policy, instances: Sequence[ProblemInstance]
) -> dict:
    """Slot similarity and utilization over traced greedy decodes."""
    results = [policy.solve(inst, capture_trace=True) for inst in instances]
    diag = memory_diagnostics(results)
    return {
        "mean_slot_similarity": diag.mean_slot_similarity,
        "utilization": diag.utilization,
        "n_decodes": len(results),
    }


def composed_gradcheck(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of the composed encoder+decoder forward
    pass at small scale (N=6, d_h=16, 4 slots)."""
    from .diffcore.gradcheck import check_gradients

    spec = ScenarioSpec("gradcheck", 6, 2, (2,))
    inst = generate_instance(spec, seed=seed + 13)
    config = PolicyConfig(
        n_periods=2,
        encoder=EncoderConfig(d_h=16, n_heads=4, n_layers=1, k_neighbors=3, phi_hidden=4),
        mem_slots=4,
        ctx_dim=4,
    )
    policy = Policy.init(config, seed=seed + 1, randomize_gates=True)

    def forward():
        emb = encode_batch([inst], config, policy.params)
        rollout = decode_batch(
            [inst], emb, policy.params, config, mode="sample", rng=np.random.default_rng(11)
        )
        return dc.mean_all(rollout.log_prob)

    return check_gradients(forward, policy.params.trainable())


def gradcheck_report(seed: int = 0, include_composed: bool = True) -> dict[str, float]:
    """Primitive suite plus the composed-policy check; {name: max rel err}."""
    report = dict(dc.primitive_suite(seed=seed))
    if include_composed:
        composed = composed_gradcheck(seed=seed)
        report["composed_policy"] = max(composed.values())
    return report
