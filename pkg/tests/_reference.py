"""Independent oracles used only by tests.

These deliberately avoid the package's own helpers: the enumerator walks
combinations recursively and sums distances with math.hypot, and the dense
attention reference is a straight full-matrix numpy transcription. They
exist to cross-check the real implementations, so they must not share code
with them.
"""

from __future__ import annotations

import math

import numpy as np


def exhaustive_optimal(instance) -> tuple[list[tuple[int, ...]], float]:
    """Per-period exact optimum by recursive enumeration, pure Python."""
    coords = [(float(x), float(y)) for x, y in instance.nodes]
    n = len(coords)

    def period_cost(weights_row, combo):
        total = 0.0
        for i in range(n):
            best = math.inf
            xi, yi = coords[i]
            for j in combo:
                xj, yj = coords[j]
                d = math.hypot(xi - xj, yi - yj)
                if d < best:
                    best = d
            total += float(weights_row[i]) * best
        return total

    def combos(start, remaining, prefix):
        if remaining == 0:
            yield tuple(prefix)
            return
        for j in range(start, n - remaining + 1):
            prefix.append(j)
            yield from combos(j + 1, remaining - 1, prefix)
            prefix.pop()

    facilities = []
    total = 0.0
    for t, p in enumerate(instance.p_schedule):
        best_cost = math.inf
        best_combo = None
        for combo in combos(0, p, []):
            c = period_cost(instance.weights[t], combo)
            if c < best_cost:
                best_cost = c
                best_combo = combo
        facilities.append(best_combo)
        total += best_cost
    return facilities, total


def dense_attention_reference(
    h_in: np.ndarray, coords: np.ndarray, values: dict[str, np.ndarray], n_heads: int, layer: int
) -> np.ndarray:
    """Full O(N^2) attention layer forward in plain numpy.

    Every node attends to every node (self included) with the per-head
    distance bias; then residual+LN, FFN, residual+LN. Mirrors the sparse
    layer's math with K >= N-1.
    """
    pre = f"enc.l{layer}"
    n, d_h = h_in.shape
    d_k = d_h // n_heads
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    # distance MLP: 1 -> P -> 1 with tanh
    z = np.tanh(dist.reshape(-1, 1) @ values[f"{pre}.phi.w1"].T + values[f"{pre}.phi.b1"])
    phi = (z @ values[f"{pre}.phi.w2"].T + values[f"{pre}.phi.b2"]).reshape(n, n)

    q = h_in @ values[f"{pre}.wq"].T
    k = h_in @ values[f"{pre}.wk"].T
    v = h_in @ values[f"{pre}.wv"].T
    heads = []
    for m in range(n_heads):
        sl = slice(m * d_k, (m + 1) * d_k)
        scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d_k)
        scores = scores + values[f"{pre}.w_head"][m] * phi
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        alpha = e / e.sum(axis=1, keepdims=True)
        heads.append(alpha @ v[:, sl])
    attended = np.concatenate(heads, axis=1) @ values[f"{pre}.wo"].T

    def ln(x, g, b, eps=1e-5):
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps) * g + b

    h_mid = ln(h_in + attended, values[f"{pre}.ln1.g"], values[f"{pre}.ln1.b"])
    ffn = (
        np.maximum(h_mid @ values[f"{pre}.ffn.w1"].T + values[f"{pre}.ffn.b1"], 0.0)
        @ values[f"{pre}.ffn.w2"].T
        + values[f"{pre}.ffn.b2"]
    )
    return ln(h_mid + ffn, values[f"{pre}.ln2.g"], values[f"{pre}.ln2.b"])
