"""Autoregressive facility selection.

Per period the decoder runs p_t steps. Each step updates a GRU context
from the previously chosen node's embedding (a learned start vector at
each period's first step) plus a period/step context, reads an external
associative memory, forms a pointer query, and softmaxes masked
compatibilities against the encoder embeddings. Nodes already chosen in
the *current* period are masked out; the mask resets at period boundaries
because a node may host a facility in several periods. Memory values
reset per instance and persist across periods within it.

Everything is batch-first over instances sharing (N, T, p_schedule);
single-instance decode is the batch-of-one case of the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .config import PolicyConfig
from .encoder import BatchEmbeddings, NodeEmbeddings
from .instance import ProblemInstance, Solution, evaluate_cost


@dataclass
class MemoryState:
    """Associative memory: static learned keys, written values.

    Read:  alpha = softmax(beta * keys @ q),  r = alpha^T values.
    Write: values += sigmoid(theta_write) * outer(alpha, q), keys fixed.
    `values` holds batch_size stacked [S, d_h] blocks.
    """

    keys: dc.Tensor
    values: dc.Tensor
    beta: float | dc.Tensor
    write_gate_param: dc.Tensor
    n_slots: int
    batch_size: int = 1


@dataclass
class StepRecord:
    period: int
    step: int
    chosen: int
    log_prob: float
    alpha: np.ndarray | None = None


@dataclass
class Trajectory:
    """Ordered node selections with their per-step log-probabilities."""

    steps: list[StepRecord] = field(default_factory=list)

    @property
    def log_prob(self) -> float:
        return float(sum(s.log_prob for s in self.steps))


@dataclass
class DecoderState:
    """Decoder snapshot for one instance (single-step probability API)."""

    h_dec: dc.Tensor  # [d_h]
    selected_mask: np.ndarray  # [N] bool, current period
    period_index: int
    step_in_period: int
    trajectory: Trajectory = field(default_factory=Trajectory)


@dataclass
class DecodeResult:
    solution: Solution
    log_prob: float
    trajectory: Trajectory
    final_memory_values: np.ndarray | None = None


@dataclass
class BatchRollout:
    """Graph-connected rollout outputs for the trainer."""

    results: list[DecodeResult]
    log_prob: dc.Tensor  # [B]
    alphas: list[dc.Tensor]  # per step, [B, S]


def initial_memory(
    params: dc.ParameterStore, config: PolicyConfig, batch_size: int = 1
) -> MemoryState:
    """Fresh per-decode memory: values start at the learned initial matrix
    (no cross-instance leakage), keys are ordinary parameters."""
    s = config.mem_slots
    values0 = params["dec.mem.values0"]
    tile = np.tile(np.arange(s, dtype=np.int64), batch_size)
    beta = params["dec.mem.beta"] if config.learn_beta else config.beta_value
    return MemoryState(
        keys=params["dec.mem.keys"],
        values=dc.gather_rows(values0, tile),
        beta=beta,
        write_gate_param=params["dec.mem.theta_write"],
        n_slots=s,
        batch_size=batch_size,
    )


def _apply_beta(scores: dc.Tensor, beta: float | dc.Tensor) -> dc.Tensor:
    if isinstance(beta, dc.Tensor):
        return dc.mul_scalar(scores, beta)
    return dc.scale(scores, float(beta))


def _memory_read_batch(q: dc.Tensor, mem: MemoryState) -> tuple[dc.Tensor, dc.Tensor]:
    """q [B, d_h] -> (alpha [B, S], r [B, d_h])."""
    scores = _apply_beta(dc.matmul(q, dc.transpose(mem.keys)), mem.beta)
    alpha = dc.softmax_masked(scores)
    flat = dc.reshape(alpha, (alpha.shape[0] * mem.n_slots,))
    r = dc.segsum_rows(dc.mul_rows(mem.values, flat), mem.n_slots)
    return alpha, r


def _memory_write_batch(
    mem: MemoryState, q: dc.Tensor, alpha: dc.Tensor, write_mult: float = 1.0
) -> MemoryState:
    """values[b*S + i] += eta * alpha[b, i] * q[b]; eta = sigmoid(theta)."""
    b = alpha.shape[0]
    eta = dc.sigmoid(mem.write_gate_param)
    q_rep = dc.gather_rows(q, np.repeat(np.arange(b, dtype=np.int64), mem.n_slots))
    delta = dc.mul_scalar(dc.mul_rows(q_rep, dc.reshape(alpha, (b * mem.n_slots,))), eta)
    if write_mult != 1.0:
        delta = dc.scale(delta, write_mult)
    return MemoryState(
        keys=mem.keys,
        values=dc.add(mem.values, delta),
        beta=mem.beta,
        write_gate_param=mem.write_gate_param,
        n_slots=mem.n_slots,
        batch_size=mem.batch_size,
    )


def memory_read(q: dc.Tensor, mem: MemoryState) -> tuple[dc.Tensor, dc.Tensor]:
    """Single-query read: q [d_h] -> (alpha [S], r [d_h])."""
    alpha, r = _memory_read_batch(dc.reshape(q, (1, q.shape[0])), mem)
    return dc.reshape(alpha, (mem.n_slots,)), dc.reshape(r, (r.shape[1],))


def memory_write(q: dc.Tensor, alpha: dc.Tensor, mem: MemoryState) -> MemoryState:
    """Single-query gated write; returns the updated memory."""
    return _memory_write_batch(
        mem,
        dc.reshape(q, (1, q.shape[0])),
        dc.reshape(alpha, (1, mem.n_slots)),
    )


def _pointer_probs(
    q_final: dc.Tensor,
    pointer_keys: dc.Tensor,
    selected: np.ndarray,
    n_nodes: int,
    d_h: int,
) -> dc.Tensor:
    """Masked softmax over nodes: u[b, i] = q_b . key_{b,i} / sqrt(d_h)."""
    b = q_final.shape[0]
    q_rep = dc.gather_rows(q_final, np.repeat(np.arange(b, dtype=np.int64), n_nodes))
    logits = dc.scale(dc.row_sum(dc.mul(q_rep, pointer_keys)), 1.0 / math.sqrt(d_h))
    return dc.softmax_masked(dc.reshape(logits, (b, n_nodes)), allowed=~selected)


def _query_vector(
    h_dec: dc.Tensor, r: dc.Tensor, params: dc.ParameterStore
) -> dc.Tensor:
    """Concat-then-linear as two blocks: W_h h_dec + W_r r + b."""
    return dc.add(
        dc.add(
            dc.matmul(h_dec, dc.transpose(params["dec.q.wh"])),
            dc.matmul(r, dc.transpose(params["dec.q.wr"])),
        ),
        params["dec.q.b"],
    )


def step_probabilities(
    state: DecoderState,
    embeddings: NodeEmbeddings,
    mem: MemoryState,
    params: dc.ParameterStore,
    config: PolicyConfig,
) -> dc.Tensor:
    """Probability over nodes for the next selection of one instance.

    Selected nodes get exactly zero probability; raises if every node is
    masked (no feasible action).
    """
    n = embeddings.h.shape[0]
    h2 = dc.reshape(state.h_dec, (1, state.h_dec.shape[0]))
    _, r = _memory_read_batch(h2, mem)
    q_final = _query_vector(h2, r, params)
    pointer_keys = dc.matmul(embeddings.h, dc.transpose(params["dec.wk"]))
    probs = _pointer_probs(
        q_final, pointer_keys, state.selected_mask[None, :], n, config.encoder.d_h
    )
    return dc.reshape(probs, (n,))


def _context_features(t: int, k: int, schedule: Sequence[int], n: int, batch: int) -> np.ndarray:
    row = np.array([t / len(schedule), k / max(1, schedule[t]), schedule[t] / n])
    return np.tile(row, (batch, 1))


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    targets = rng.random(probs.shape[0]) * cdf[:, -1]
    chosen = np.empty(probs.shape[0], dtype=np.int64)
    for i in range(probs.shape[0]):
        chosen[i] = np.searchsorted(cdf[i], targets[i], side="right")
    return np.minimum(chosen, probs.shape[1] - 1)


def decode_batch(
    instances: list[ProblemInstance],
    embeddings: BatchEmbeddings,
    params: dc.ParameterStore,
    config: PolicyConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    capture_alpha: bool = False,
    forced: np.ndarray | None = None,
) -> BatchRollout:
    """Roll out all instances of one schedule group in lockstep.

    All instances must share (N, T, p_schedule). Greedy picks the argmax
    (ties to the lowest index); sample mode draws from the step
    distribution using `rng`; replay follows `forced` [B, sum(p_t)] node
    choices and scores them under the current parameters.
    """
    if mode not in ("greedy", "sample", "replay"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    if mode == "replay":
        if forced is None:
            raise ValueError("replay mode needs forced choices")
        forced = np.asarray(forced, dtype=np.int64)
    b = len(instances)
    n = instances[0].n_nodes
    schedule = instances[0].p_schedule
    for inst in instances:
        if inst.n_nodes != n or inst.p_schedule != schedule:
            raise ValueError("decode batch requires equal node counts and p_schedules")
    if embeddings.batch_size != b or embeddings.n_nodes != n:
        raise ValueError("embeddings do not match the instance batch")

    d_h = config.encoder.d_h
    h_flat = embeddings.h
    pointer_keys = dc.matmul(h_flat, dc.transpose(params["dec.wk"]))
    gru = dc.gru_params(params, "dec.gru")
    mem = initial_memory(params, config, batch_size=b)
    row_offsets = np.arange(b, dtype=np.int64) * n

    h_dec = dc.constant(np.zeros((b, d_h)))
    total_logp: dc.Tensor | None = None
    alphas: list[dc.Tensor] = []
    trajectories = [Trajectory() for _ in range(b)]
    facilities: list[list[tuple[int, ...]]] = [[] for _ in range(b)]
    flat_step = 0

    for t, p_t in enumerate(schedule):
        selected = np.zeros((b, n), dtype=bool)
        prev = dc.gather_rows(params["dec.start"], np.zeros(b, dtype=np.int64))
        chosen_in_period: list[list[int]] = [[] for _ in range(b)]
        for k in range(p_t):
            ctx = dc.linear(
                dc.constant(_context_features(t, k, schedule, n, b)),
                params["dec.ctx.w"],
                params["dec.ctx.b"],
            )
            h_dec = dc.gru_cell(h_dec, dc.concat([prev, ctx], axis=1), gru)
            alpha, r = _memory_read_batch(h_dec, mem)
            q_final = _query_vector(h_dec, r, params)
            probs = _pointer_probs(q_final, pointer_keys, selected, n, d_h)

            if mode == "greedy":
                chosen = probs.data.argmax(axis=1)
            elif mode == "sample":
                chosen = _sample_rows(probs.data, rng)
            else:
                chosen = forced[:, flat_step]
            flat_step += 1

            step_logp = dc.log(dc.take_per_row(probs, chosen))
            total_logp = step_logp if total_logp is None else dc.add(total_logp, step_logp)
            mem = _memory_write_batch(mem, h_dec, alpha, config.write_mult)
            alphas.append(alpha)

            selected[np.arange(b), chosen] = True
            prev = dc.gather_rows(h_flat, chosen + row_offsets)
            for i in range(b):
                chosen_in_period[i].append(int(chosen[i]))
                trajectories[i].steps.append(
                    StepRecord(
                        period=t,
                        step=k,
                        chosen=int(chosen[i]),
                        log_prob=float(step_logp.data[i]),
                        alpha=alpha.data[i].copy() if capture_alpha else None,
                    )
                )
        for i in range(b):
            facilities[i].append(tuple(sorted(chosen_in_period[i])))

    final_values = mem.values.data.reshape(b, config.mem_slots, d_h)
    results = []
    for i, inst in enumerate(instances):
        fac = tuple(facilities[i])
        sol = Solution(fac, evaluate_cost(inst, fac), instance_id=inst.id, solver="policy")
        results.append(
            DecodeResult(
                solution=sol,
                log_prob=float(total_logp.data[i]),
                trajectory=trajectories[i],
                final_memory_values=final_values[i].copy() if capture_alpha else None,
            )
        )
    return BatchRollout(results=results, log_prob=total_logp, alphas=alphas)


def decode(
    instance: ProblemInstance,
    embeddings: NodeEmbeddings,
    params: dc.ParameterStore,
    config: PolicyConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    capture_trace: bool = False,
) -> DecodeResult:
    """Decode one instance; returns the solution, its total log-probability,
    and the step trajectory."""
    batch = BatchEmbeddings(h=embeddings.h, batch_size=1, n_nodes=instance.n_nodes)
    rollout = decode_batch(
        [instance], batch, params, config, mode=mode, rng=rng, capture_alpha=capture_trace
    )
    return rollout.results[0]


def sample_best_of(
    instance: ProblemInstance,
    embeddings: NodeEmbeddings,
    params: dc.ParameterStore,
    config: PolicyConfig,
    n_samples: int,
    rng: np.random.Generator,
) -> DecodeResult:
    """Best (lowest-cost) of n_samples independent sampled decodes."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    best: DecodeResult | None = None
    for _ in range(n_samples):
        cand = decode(instance, embeddings, params, config, mode="sample", rng=rng)
        if best is None or cand.solution.cost < best.solution.cost:
            best = cand
    return best


@dataclass
class MemoryDiagnostics:
    mean_slot_similarity: float
    utilization: float


def memory_diagnostics(results: DecodeResult | Sequence[DecodeResult]) -> MemoryDiagnostics:
    """Slot diversity and usage over alpha-captured decodes.

    similarity: mean |cosine| over distinct pairs of final value rows,
    averaged across decodes. utilization: fraction of slots whose maximum
    read weight over all steps strictly exceeds 1/S (uniform reads never
    count as utilized).
    """
    if isinstance(results, DecodeResult):
        results = [results]
    if not results:
        raise ValueError("no decode results")
    sims = []
    max_weight: np.ndarray | None = None
    for res in results:
        if res.final_memory_values is None:
            raise ValueError("decode was not run with trace capture")
        values = res.final_memory_values
        s = values.shape[0]
        norms = np.linalg.norm(values, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = values / safe[:, None]
        cos = np.abs(unit @ unit.T)
        pair_sum = (cos.sum() - np.trace(cos)) / 2.0
        sims.append(pair_sum / (s * (s - 1) / 2.0) if s > 1 else 1.0)
        for step in res.trajectory.steps:
            if step.alpha is None:
                raise ValueError("decode was not run with trace capture")
            max_weight = step.alpha if max_weight is None else np.maximum(max_weight, step.alpha)
    s = results[0].final_memory_values.shape[0]
    utilization = float((max_weight > 1.0 / s).mean()) if max_weight is not None else 0.0
    return MemoryDiagnostics(
        mean_slot_similarity=float(np.mean(sims)), utilization=utilization
    )
