"""REINFORCE with a greedy rollout baseline plus memory regularizers.

The per-step surrogate is mean((C(pi) - b(s)) * log p(pi)): the advantage
is computed outside the graph, so minimizing the surrogate follows the
policy-gradient of expected cost exactly. b(s) is the cost of the frozen
baseline network's greedy decode; the baseline copies the policy whenever
validation strictly improves the historical best.

Total loss: L_RL + lambda_orth * ||M M^T - I||_F^2 (on the learned initial
memory values) + lambda_ent * E[sum alpha log alpha] (an entropy bonus on
the read weights; minimizing it smooths the write attention).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .config import PolicyConfig, TrainConfig
from .decoder import MemoryState, decode_batch
from .encoder import encode_batch
from .instance import ProblemInstance, ScenarioSpec, generate_instance
from .model import Policy


class TrainingDiverged(RuntimeError):
    """Non-finite loss; the diagnostic dump path is in args[1]."""


def orth_loss(mem: MemoryState | dc.Tensor) -> dc.Tensor:
    """Squared Frobenius norm of (M M^T - I) over memory value rows."""
    values = mem.values if isinstance(mem, MemoryState) else mem
    s = values.shape[0]
    eye = dc.constant(np.eye(s))
    return dc.frobenius_sq(dc.sub(dc.matmul(values, dc.transpose(values)), eye))


def ent_loss(alphas) -> dc.Tensor:
    """Negative mean read entropy: mean over steps of sum_i alpha_i log alpha_i.

    Uniform weights give the minimum -log(S); one-hot weights give 0
    (0*log 0 := 0). Accepts a [M, S] tensor/array or a sequence of them.
    """
    if isinstance(alphas, (list, tuple)):
        rows = [a if isinstance(a, dc.Tensor) else dc.constant(np.atleast_2d(a)) for a in alphas]
        stacked = dc.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    elif isinstance(alphas, dc.Tensor):
        stacked = alphas
    else:
        stacked = dc.constant(np.atleast_2d(np.asarray(alphas, dtype=np.float64)))
    if stacked.ndim == 1:
        stacked = dc.reshape(stacked, (1, stacked.shape[0]))
    return dc.mean_all(dc.row_sum(dc.xlogx(stacked)))


def _group_by_shape(instances: Sequence[ProblemInstance]) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault((inst.n_nodes, inst.p_schedule), []).append(i)
    return groups


@dataclass
class BatchStats:
    mean_cost: float
    baseline_cost: float
    mean_advantage: float


def reinforce_batch_loss(
    instances: Sequence[ProblemInstance],
    policy: Policy,
    baseline: Policy,
    rng: np.random.Generator,
) -> tuple[dc.Tensor, list[dc.Tensor], BatchStats]:
    """Sampled-rollout surrogate loss over one instance batch.

    Returns (L_RL, read alphas of the sampled decodes, stats). The
    advantage C(pi) - b(s) enters as a constant: a zero-advantage batch
    has an exactly zero L_RL gradient.
    """
    if not instances:
        raise ValueError("empty batch")
    n_total = len(instances)
    costs = np.zeros(n_total)
    base_costs = np.zeros(n_total)
    group_terms: list[dc.Tensor] = []
    alphas: list[dc.Tensor] = []

    for _, idxs in _group_by_shape(instances).items():
        sub = [instances[i] for i in idxs]
        emb = encode_batch(sub, policy.config, policy.params)
        rollout = decode_batch(sub, emb, policy.params, policy.config, mode="sample", rng=rng)
        with dc.no_grad():
            bemb = encode_batch(sub, baseline.config, baseline.params)
            brollout = decode_batch(sub, bemb, baseline.params, baseline.config, mode="greedy")
        for local, gi in enumerate(idxs):
            costs[gi] = rollout.results[local].solution.cost
            base_costs[gi] = brollout.results[local].solution.cost
        adv = costs[idxs] - base_costs[idxs]
        group_terms.append(dc.sum_all(dc.mul(rollout.log_prob, dc.constant(adv))))
        alphas.extend(rollout.alphas)

    total = group_terms[0]
    for term in group_terms[1:]:
        total = dc.add(total, term)
    loss = dc.scale(total, 1.0 / n_total)
    stats = BatchStats(
        mean_cost=float(costs.mean()),
        baseline_cost=float(base_costs.mean()),
        mean_advantage=float((costs - base_costs).mean()),
    )
    return loss, alphas, stats


def total_loss(
    loss_rl: dc.Tensor,
    alphas: list[dc.Tensor],
    policy: Policy,
    config: TrainConfig,
) -> tuple[dc.Tensor, float, float]:
    """L_RL + lambda_orth * L_orth + lambda_ent * L_ent; returns the scalar
    graph plus the two regularizer values."""
    l_orth = orth_loss(policy.params["dec.mem.values0"])
    l_ent = ent_loss(alphas)
    if config.flip_entropy_sign:
        l_ent = dc.scale(l_ent, -1.0)
    out = loss_rl
    if config.lambda_orth > 0:
        out = dc.add(out, dc.scale(l_orth, config.lambda_orth))
    if config.lambda_ent > 0:
        out = dc.add(out, dc.scale(l_ent, config.lambda_ent))
    return out, l_orth.item(), l_ent.item()


def greedy_validation_cost(policy: Policy, instances: Sequence[ProblemInstance]) -> float:
    """Mean greedy cost over a fixed instance set."""
    total = 0.0
    with dc.no_grad():
        for _, idxs in _group_by_shape(instances).items():
            sub = [instances[i] for i in idxs]
            emb = encode_batch(sub, policy.config, policy.params)
            rollout = decode_batch(sub, emb, policy.params, policy.config, mode="greedy")
            total += sum(r.solution.cost for r in rollout.results)
    return total / len(instances)


@dataclass
class TrainState:
    policy: Policy
    baseline: Policy
    optimizer: dc.AdamState
    best_validation_cost: float
    epoch: int
    step: int
    history: list[dict] = field(default_factory=list)


def train(
    config: TrainConfig,
    scenario: ScenarioSpec,
    policy_config: PolicyConfig,
    out_dir: str | Path | None = None,
    quiet: bool = True,
) -> TrainState:
    """Run the full REINFORCE loop.

    Fresh instances are sampled per step (infinite-data regime). Per
    epoch the policy is greedy-evaluated on a fixed seeded validation set;
    theta* copies the policy on strict improvement of the historical best.
    Writes per-epoch JSONL logs plus best/last checkpoints when out_dir is
    given. Raises TrainingDiverged (with a diagnostic dump) on non-finite
    loss.
    """
    if policy_config.n_periods != scenario.n_periods:
        raise ValueError("policy n_periods must match the scenario")
    root = np.random.SeedSequence(config.seed)
    init_ss, corpus_ss, sample_ss, val_ss = root.spawn(4)
    policy = Policy.init(policy_config, seed=init_ss)
    baseline = policy.copy()
    optimizer = dc.AdamState()
    corpus_rng = np.random.default_rng(corpus_ss)
    sample_rng = np.random.default_rng(sample_ss)
    val_seed_rng = np.random.default_rng(val_ss)
    val_seeds = [int(s) for s in val_seed_rng.integers(0, 2**31 - 1, size=config.validation_size)]
    val_instances = [generate_instance(scenario, seed=s) for s in val_seeds]

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = (out_path / "train_log.jsonl").open("w")

    state = TrainState(
        policy=policy,
        baseline=baseline,
        optimizer=optimizer,
        best_validation_cost=float("inf"),
        epoch=0,
        step=0,
    )
    try:
        for epoch in range(config.epochs):
            epoch_stats: list[tuple[BatchStats, float, float, float]] = []
            for _ in range(config.steps_per_epoch):
                batch_seeds = [
                    int(s) for s in corpus_rng.integers(0, 2**31 - 1, size=config.batch_size)
                ]
                batch = [generate_instance(scenario, seed=s) for s in batch_seeds]
                policy.params.zero_grad()
                loss_rl, alphas, stats = reinforce_batch_loss(batch, policy, baseline, sample_rng)
                loss, l_orth_v, l_ent_v = total_loss(loss_rl, alphas, policy, config)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    dump = {
                        "epoch": epoch,
                        "step": state.step,
                        "batch_seeds": batch_seeds,
                        "loss_rl": loss_rl.item(),
                        "l_orth": l_orth_v,
                        "l_ent": l_ent_v,
                        "mean_cost": stats.mean_cost,
                        "baseline_cost": stats.baseline_cost,
                    }
                    dump_path = "<no out_dir>"
                    if out_path is not None:
                        dump_path = str(out_path / "diverged.json")
                        Path(dump_path).write_text(json.dumps(dump, indent=1))
                    raise TrainingDiverged(f"non-finite loss {loss_value}", dump_path)
                dc.backward(loss)
                dc.adam_step(policy.params.trainable(), optimizer, config.lr)
                state.step += 1
                epoch_stats.append((stats, loss_rl.item(), l_orth_v, l_ent_v))

            val_cost = greedy_validation_cost(policy, val_instances)
            updated = val_cost < state.best_validation_cost
            if updated:
                state.best_validation_cost = val_cost
                state.baseline = policy.copy()
                baseline = state.baseline
                if out_path is not None:
                    state.baseline.save(out_path / "ckpt_best")
            state.epoch = epoch + 1
            record = {
                "epoch": epoch,
                "mean_cost": float(np.mean([s.mean_cost for s, *_ in epoch_stats])),
                "baseline_cost": float(np.mean([s.baseline_cost for s, *_ in epoch_stats])),
                "L_RL": float(np.mean([v for _, v, _, _ in epoch_stats])),
                "L_orth": float(np.mean([v for _, _, v, _ in epoch_stats])),
                "L_ent": float(np.mean([v for _, _, _, v in epoch_stats])),
                "val_cost": val_cost,
                "updated_baseline": bool(updated),
            }
            state.history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if out_path is not None:
                policy.save(out_path / "ckpt_last")
            if not quiet:
                print(
                    f"epoch {epoch}: mean_cost {record['mean_cost']:.4f} "
                    f"val {val_cost:.4f} best {state.best_validation_cost:.4f}"
                    f"{' *' if updated else ''}"
                )
    finally:
        if log_file is not None:
            log_file.close()
    return state


@dataclass(frozen=True)
class DecodeMode:
    """greedy or best-of-S sampling; parsed from 'greedy' / 'sample128'."""

    kind: str
    samples: int = 1

    @classmethod
    def parse(cls, text: str) -> "DecodeMode":
        if text == "greedy":
            return cls("greedy")
        if text.startswith("sample"):
            n = int(text[len("sample"):] or "1")
            if n < 1:
                raise ValueError("sample count must be >= 1")
            return cls("sample", n)
        raise ValueError(f"unknown decode mode {text!r}")

    @property
    def label(self) -> str:
        return "greedy" if self.kind == "greedy" else f"sample{self.samples}"


def evaluate_policy(
    policy: Policy,
    instances: Sequence[ProblemInstance],
    references: dict[str, float],
    modes: Sequence[DecodeMode],
    rng: np.random.Generator,
) -> list[dict]:
    """Per-instance, per-mode rows of objective, gap%, and solve seconds.

    Missing reference costs yield gap None and ref_kind 'none'; callers
    may substitute best-known values before rendering.
    """
    rows = []
    for inst in instances:
        for mode in modes:
            t0 = time.perf_counter()
            result = policy.solve(inst, mode=mode.kind, samples=mode.samples, rng=rng)
            elapsed = time.perf_counter() - t0
            ref = references.get(inst.id)
            gap = None if ref is None else 100.0 * (result.solution.cost - ref) / ref
            rows.append(
                {
                    "instance_id": inst.id,
                    "algorithm": f"policy-{mode.label}",
                    "obj": result.solution.cost,
                    "ref": ref,
                    "gap_pct": gap,
                    "time_s": elapsed,
                }
            )
    return rows
