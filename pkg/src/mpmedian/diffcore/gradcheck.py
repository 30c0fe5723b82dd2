"""Central finite-difference verification of the backward pass.

Relative error is |ad - fd| / max(1, |ad|, |fd|): pure relative error
explodes on near-zero gradients where finite differences are all noise,
while this mixed form stays meaningful across magnitudes in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .nn import add_gru_params, gru_cell, gru_params
from .tensor import (
    Parameter,
    ParameterStore,
    Tensor,
    add,
    backward,
    concat,
    frobenius_sq,
    gather_rows,
    layer_norm,
    log,
    matmul,
    mean_all,
    mul,
    mul_rows,
    mul_scalar,
    outer,
    relu,
    reshape,
    row_sum,
    scale,
    segsum_rows,
    sigmoid,
    slice_cols,
    softmax_masked,
    sub,
    sum_all,
    take_elem,
    take_per_row,
    tanh,
    xlogx,
)

DEFAULT_EPS = 1e-5


def finite_diff_grad(
    f: Callable[[], Tensor], param: Parameter, eps: float = DEFAULT_EPS
) -> np.ndarray:
    """d f / d param by central differences; f rebuilds the graph each call."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        f_plus = f().item()
        flat[i] = saved - eps
        f_minus = f().item()
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def check_gradients(
    f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = DEFAULT_EPS
) -> dict[str, float]:
    """Max mixed-relative error per parameter between backward and central
    finite differences."""
    for p in params:
        p.grad = None
    backward(f())
    report: dict[str, float] = {}
    for p in params:
        ad = p.grad if p.grad is not None else np.zeros_like(p.data)
        fd = finite_diff_grad(f, p, eps)
        denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        report[p.name] = float(np.max(np.abs(ad - fd) / denom)) if p.data.size else 0.0
    return report


def primitive_suite(seed: int = 0) -> dict[str, float]:
    """Gradient-check every primitive through a scalar reduction.

    Returns {check name: max relative error}. The composed policy forward
    check lives in the bench module, which owns the model.
    """
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    def run(name: str, f: Callable[[], Tensor], params: Sequence[Parameter]) -> None:
        errs = check_gradients(f, params)
        report[name] = max(errs.values()) if errs else 0.0

    def fresh(*specs):
        store = ParameterStore()
        out = []
        for name, shape, lo, hi in specs:
            out.append(store.add(name, rng.uniform(lo, hi, size=shape)))
        return out

    a, b = fresh(("a", (3, 4), -1, 1), ("b", (4, 2), -1, 1))
    run("matmul", lambda: sum_all(matmul(a, b)), [a, b])

    a, b = fresh(("a", (3, 4), -1, 1), ("b", (3, 4), -1, 1))
    run("add", lambda: frobenius_sq(add(a, b)), [a, b])
    run("sub", lambda: frobenius_sq(sub(a, b)), [a, b])
    run("mul", lambda: sum_all(mul(a, b)), [a, b])

    a, b = fresh(("a", (3, 4), -1, 1), ("b", (4,), -1, 1))
    run("add_bias", lambda: frobenius_sq(add(a, b)), [a, b])

    (a,) = fresh(("a", (3, 4), -1, 1))
    run("scale", lambda: sum_all(scale(mul(a, a), -1.7)), [a])
    run("mean_all", lambda: mean_all(mul(a, a)), [a])
    run("relu", lambda: frobenius_sq(relu(a)), [a])
    run("tanh", lambda: sum_all(tanh(a)), [a])
    run("sigmoid", lambda: sum_all(sigmoid(a)), [a])

    a, c = fresh(("a", (3, 4), -1, 1), ("c", (), -1, 1))
    run("mul_scalar", lambda: sum_all(mul_scalar(mul(a, a), c)), [a, c])

    a, b = fresh(("a", (2, 3), -1, 1), ("b", (2, 2), -1, 1))
    run("concat", lambda: frobenius_sq(concat([a, b], axis=1)), [a, b])

    (a,) = fresh(("a", (4, 3), -1, 1))
    idx = np.array([0, 2, 2, 1, 3])
    run("gather_rows", lambda: frobenius_sq(gather_rows(a, idx)), [a])

    (a,) = fresh(("a", (3, 4), 0.1, 1.0))
    cols = np.array([1, 0, 3])
    run("take_per_row", lambda: sum_all(log(take_per_row(a, cols))), [a])
    run("log", lambda: sum_all(log(a)), [a])
    run("xlogx", lambda: sum_all(xlogx(a)), [a])

    (a,) = fresh(("a", (5,), -1, 1))
    run("take_elem", lambda: mul_scalar(take_elem(a, 2), take_elem(a, 3)), [a])

    (a,) = fresh(("a", (3, 5), -1, 1))
    run("slice_cols", lambda: frobenius_sq(slice_cols(a, 1, 4)), [a])

    (a,) = fresh(("a", (3, 4), -1, 1))
    run("reshape_row_sum", lambda: sum_all(mul(row_sum(reshape(a, (4, 3))), row_sum(reshape(a, (4, 3))))), [a])

    a, v = fresh(("a", (4, 3), -1, 1), ("v", (4,), -1, 1))
    run("mul_rows", lambda: frobenius_sq(mul_rows(a, v)), [a, v])

    (a,) = fresh(("a", (6, 3), -1, 1))
    run("segsum_rows", lambda: frobenius_sq(segsum_rows(a, 2)), [a])

    u, v = fresh(("u", (3,), -1, 1), ("v", (4,), -1, 1))
    run("outer", lambda: frobenius_sq(outer(u, v)), [u, v])

    (a,) = fresh(("a", (3, 4), -1, 1))
    run("frobenius_sq", lambda: frobenius_sq(a), [a])

    a, w = fresh(("a", (3, 5), -1, 1), ("w", (3, 5), -1, 1))
    run("softmax", lambda: sum_all(mul(softmax_masked(a), w)), [a, w])
    allowed = rng.random((3, 5)) > 0.3
    allowed[:, 0] = True
    run("softmax_masked", lambda: sum_all(mul(softmax_masked(a, allowed), w)), [a, w])

    a, g, bb, w = fresh(
        ("a", (3, 6), -1, 1), ("g", (6,), 0.5, 1.5), ("b", (6,), -0.5, 0.5), ("w", (3, 6), -1, 1)
    )
    run("layer_norm", lambda: sum_all(mul(layer_norm(a, g, bb), w)), [a, g, bb, w])

    store = ParameterStore()
    add_gru_params(store, "gru", 4, 3, rng)
    for p in store:
        p.data = rng.uniform(-0.7, 0.7, size=p.data.shape)
    h0 = store.add("h0", rng.uniform(-1, 1, size=(2, 4)))
    x = store.add("x", rng.uniform(-1, 1, size=(2, 3)))
    gp = gru_params(store, "gru")
    run("gru_cell", lambda: frobenius_sq(gru_cell(h0, x, gp)), list(store))

    return report
