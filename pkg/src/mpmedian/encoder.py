"""Geometry-aware node embeddings.

Stacked multi-head attention layers where (a) each head's compatibility
carries a learned scalar-weighted MLP of the pairwise Euclidean distance,
and (b) each node attends only to itself plus its K spatially nearest
neighbors, cutting the attention cost from O(N^2) to O(NK).

The batch layout is flat: a batch of B same-sized instances is one
[B*N, d_h] matrix whose attention neighborhoods never cross instance
boundaries. Single-instance encode is the B=1 case of the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import EncoderConfig, PolicyConfig
from .instance import ProblemInstance, knn_neighbors


@dataclass
class AttentionGraph:
    """Precomputed sparse attention support: per row, itself then its
    neighbors, with matching pair distances."""

    n_rows: int  # B*N
    width: int  # 1 + neighbors per node
    gather_idx: np.ndarray  # [n_rows*width] attended row per pair
    query_idx: np.ndarray  # [n_rows*width] querying row per pair
    dist_col: np.ndarray  # [n_rows*width, 1] pair distances


@dataclass
class NodeEmbeddings:
    """Final encoder output for one instance (optionally with per-layer
    intermediates for tests)."""

    h: dc.Tensor  # [N, d_h]
    layers: list[np.ndarray] | None = None


@dataclass
class BatchEmbeddings:
    h: dc.Tensor  # [B*N, d_h]
    batch_size: int
    n_nodes: int
    layers: list[np.ndarray] | None = None


def instance_features(instance: ProblemInstance) -> np.ndarray:
    """Per-node raw input [x, y, w^1, ..., w^T].

    All periods' weights are included: the decoder has no other access to
    future-period demand.
    """
    return np.concatenate([instance.nodes, instance.weights.T], axis=1)


def build_attention_graph(
    instances: list[ProblemInstance], k: int, sparse: bool = True
) -> AttentionGraph:
    """Neighbor support for a batch of same-sized instances; self always
    attended so K=0-like degenerate graphs stay defined."""
    n = instances[0].n_nodes
    k_eff = min(k, n - 1) if sparse else n - 1
    width = 1 + k_eff
    gather_chunks = []
    dist_chunks = []
    for b, inst in enumerate(instances):
        if inst.n_nodes != n:
            raise ValueError("attention batch requires equal node counts")
        if k_eff > 0:
            nbr = knn_neighbors(inst, k_eff)  # [N, k_eff]
        else:
            nbr = np.zeros((n, 0), dtype=np.int64)
        local = np.concatenate([np.arange(n, dtype=np.int64)[:, None], nbr], axis=1)
        gather_chunks.append((local + b * n).reshape(-1))
        diffs = inst.nodes[np.arange(n)[:, None], :] - inst.nodes[local, :]
        dist_chunks.append(np.sqrt((diffs * diffs).sum(axis=2)).reshape(-1))
    n_rows = len(instances) * n
    return AttentionGraph(
        n_rows=n_rows,
        width=width,
        gather_idx=np.concatenate(gather_chunks),
        query_idx=np.repeat(np.arange(n_rows, dtype=np.int64), width),
        dist_col=np.concatenate(dist_chunks)[:, None],
    )


def _phi(dist: dc.Tensor, params: dc.ParameterStore, layer: int) -> dc.Tensor:
    """Distance MLP 1 -> phi_hidden -> 1 with tanh, shared across heads."""
    hidden = dc.tanh(dc.linear(dist, params[f"enc.l{layer}.phi.w1"], params[f"enc.l{layer}.phi.b1"]))
    return dc.linear(hidden, params[f"enc.l{layer}.phi.w2"], params[f"enc.l{layer}.phi.b2"])


def initial_embedding(
    instance: ProblemInstance, params: dc.ParameterStore, config: PolicyConfig
) -> dc.Tensor:
    """h^(0) = W_init * [x, y, w^1..w^T] + b_init, rowwise."""
    feats = instance_features(instance)
    if feats.shape[1] != config.feature_dim:
        raise ValueError(
            f"instance has {feats.shape[1]} features, policy expects {config.feature_dim} "
            f"(n_periods mismatch)"
        )
    return dc.linear(dc.constant(feats), params["enc.init.w"], params["enc.init.b"])


def distance_bias(
    d: float, head: int, params: dc.ParameterStore, config: PolicyConfig, layer: int = 0
) -> dc.Tensor:
    """Per-head additive attention bias w_m * phi(d) for one distance."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    phi_out = _phi(dc.constant(np.array([[float(d)]])), params, layer)
    w_m = dc.take_elem(params[f"enc.l{layer}.w_head"], head)
    return dc.reshape(dc.mul_scalar(phi_out, w_m), ())


def sparse_attention_layer(
    h_in: dc.Tensor,
    graph: AttentionGraph,
    params: dc.ParameterStore,
    config: PolicyConfig,
    layer: int,
) -> dc.Tensor:
    """One distance-biased sparse MHA block plus FFN, each with residual
    and layer norm."""
    enc = config.encoder
    d_k = enc.d_k
    pre = f"enc.l{layer}"

    phi_vec = dc.reshape(_phi(dc.constant(graph.dist_col), params, layer), (graph.dist_col.shape[0],))
    w_head = params[f"{pre}.w_head"]

    q_all = dc.matmul(h_in, dc.transpose(params[f"{pre}.wq"]))
    k_all = dc.matmul(h_in, dc.transpose(params[f"{pre}.wk"]))
    v_all = dc.matmul(h_in, dc.transpose(params[f"{pre}.wv"]))

    head_outs = []
    for m in range(enc.n_heads):
        lo, hi = m * d_k, (m + 1) * d_k
        q_m = dc.slice_cols(q_all, lo, hi)
        k_m = dc.slice_cols(k_all, lo, hi)
        v_m = dc.slice_cols(v_all, lo, hi)
        q_pairs = dc.gather_rows(q_m, graph.query_idx)
        k_pairs = dc.gather_rows(k_m, graph.gather_idx)
        scores = dc.scale(dc.row_sum(dc.mul(q_pairs, k_pairs)), 1.0 / np.sqrt(d_k))
        scores = dc.add(scores, dc.mul_scalar(phi_vec, dc.take_elem(w_head, m)))
        alpha = dc.softmax_masked(dc.reshape(scores, (graph.n_rows, graph.width)))
        v_pairs = dc.gather_rows(v_m, graph.gather_idx)
        weighted = dc.mul_rows(v_pairs, dc.reshape(alpha, (graph.n_rows * graph.width,)))
        head_outs.append(dc.segsum_rows(weighted, graph.width))

    attended = dc.matmul(dc.concat(head_outs, axis=1), dc.transpose(params[f"{pre}.wo"]))
    h_mid = dc.layer_norm(dc.add(h_in, attended), params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
    ffn = dc.linear(
        dc.relu(dc.linear(h_mid, params[f"{pre}.ffn.w1"], params[f"{pre}.ffn.b1"])),
        params[f"{pre}.ffn.w2"],
        params[f"{pre}.ffn.b2"],
    )
    return dc.layer_norm(dc.add(h_mid, ffn), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])


def encode_batch(
    instances: list[ProblemInstance],
    config: PolicyConfig,
    params: dc.ParameterStore,
    capture_layers: bool = False,
) -> BatchEmbeddings:
    """Initial embedding then L attention layers over a same-sized batch.
    K-NN lists are computed once per instance."""
    if not instances:
        raise ValueError("empty batch")
    feats = np.concatenate([instance_features(inst) for inst in instances], axis=0)
    if feats.shape[1] != config.feature_dim:
        raise ValueError(
            f"instances have {feats.shape[1]} features, policy expects {config.feature_dim}"
        )
    h = dc.linear(dc.constant(feats), params["enc.init.w"], params["enc.init.b"])
    layers = [h.data.copy()] if capture_layers else None
    if config.encoder.n_layers > 0:
        graph = build_attention_graph(instances, config.encoder.k_neighbors, config.knn_sparse)
        for layer in range(config.encoder.n_layers):
            h = sparse_attention_layer(h, graph, params, config, layer)
            if capture_layers:
                layers.append(h.data.copy())
    return BatchEmbeddings(
        h=h, batch_size=len(instances), n_nodes=instances[0].n_nodes, layers=layers
    )


def encode(
    instance: ProblemInstance,
    config: PolicyConfig,
    params: dc.ParameterStore,
    capture_layers: bool = False,
) -> NodeEmbeddings:
    batch = encode_batch([instance], config, params, capture_layers)
    return NodeEmbeddings(h=batch.h, layers=batch.layers)
