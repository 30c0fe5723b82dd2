"""Small neural building blocks on top of the tensor primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ParameterStore,
    ShapeError,
    Tensor,
    add,
    constant,
    matmul,
    mul,
    reshape,
    sigmoid,
    sub,
    tanh,
    transpose,
)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [B, in] @ w.T [in, out] (+ b): the standard affine map."""
    out = matmul(x, transpose(w))
    if b is not None:
        out = add(out, b)
    return out


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class GRUParams:
    """Gates follow h' = z*h + (1-z)*cand, so a saturated update gate
    (z -> 1) holds the previous state."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor


def add_gru_params(
    store: ParameterStore, prefix: str, d_hidden: int, d_in: int, rng: np.random.Generator
) -> None:
    for gate in ("z", "r", "h"):
        store.add(f"{prefix}.w{gate}", uniform_init(rng, (d_hidden, d_in), d_in))
        store.add(f"{prefix}.u{gate}", uniform_init(rng, (d_hidden, d_hidden), d_hidden))
        store.add(f"{prefix}.b{gate}", np.zeros(d_hidden))


def gru_params(store: ParameterStore, prefix: str) -> GRUParams:
    return GRUParams(
        wz=store[f"{prefix}.wz"], uz=store[f"{prefix}.uz"], bz=store[f"{prefix}.bz"],
        wr=store[f"{prefix}.wr"], ur=store[f"{prefix}.ur"], br=store[f"{prefix}.br"],
        wh=store[f"{prefix}.wh"], uh=store[f"{prefix}.uh"], bh=store[f"{prefix}.bh"],
    )


def gru_cell(h_prev: Tensor, x: Tensor, p: GRUParams) -> Tensor:
    """One gated recurrent unit update, batched over rows.

    Accepts vectors or [B, d] matrices. Candidate state uses the reset
    gate on the recurrent term: cand = tanh(Wh x + r * (Uh h) + bh).
    """
    squeeze = h_prev.ndim == 1
    if squeeze != (x.ndim == 1):
        raise ShapeError("gru_cell: h_prev and x must both be vectors or both matrices")
    h = reshape(h_prev, (1, h_prev.shape[0])) if squeeze else h_prev
    xin = reshape(x, (1, x.shape[0])) if squeeze else x

    z = sigmoid(add(add(matmul(xin, transpose(p.wz)), matmul(h, transpose(p.uz))), p.bz))
    r = sigmoid(add(add(matmul(xin, transpose(p.wr)), matmul(h, transpose(p.ur))), p.br))
    cand = tanh(add(add(matmul(xin, transpose(p.wh)), mul(r, matmul(h, transpose(p.uh)))), p.bh))
    ones = constant(np.ones_like(z.data))
    out = add(mul(z, h), mul(sub(ones, z), cand))
    return reshape(out, (out.shape[1],)) if squeeze else out
