"""Minimal reverse-mode autodiff over float64 numpy buffers.

Every op records node-granular vector-Jacobian products; `backward` walks
the graph in reverse topological order and accumulates gradients into leaf
tensors. Gradients accumulate additively across uses and across backward
calls: a second backward without zeroing double-accumulates.

Shape rules are deliberately strict: ops act on scalars, vectors, and
matrices, and the only implicit broadcast is a 1-D bias over the rows of a
2-D input (the leading batch dimension). Anything else needs an explicit
reshape, which keeps silent shape bugs out of the model code.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class ShapeError(ValueError):
    pass


class InfeasibleSoftmaxError(ValueError):
    """Every entry of a softmax row is masked: no feasible action."""


class Tensor:
    """A float64 array plus optional autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named leaf tensor; the name is the stable checkpoint key."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf: accumulate persistently
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = flowing.get(id(p))
            # out-of-place: vjps may return views of the flowing grad
            flowing[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        # row bias over the batch dimension
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add shapes {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes {a.shape} - {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable scalar (tensor with one element)."""
    if s.data.size != 1:
        raise ShapeError(f"mul_scalar needs a one-element scalar, got {s.shape}")
    ad = a.data
    sv = float(s.data.reshape(()))
    return _node(
        ad * sv,
        (a, s),
        lambda g: (g * sv, np.asarray((g * ad).sum()).reshape(s.shape)),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tensors, vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    """out[i] = a[idx[i]]; backward scatter-adds (rows may repeat)."""
    if a.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got {a.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows needs a flat index vector")
    ad = a.data

    def vjp(g):
        ga = np.zeros_like(ad)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(ad[idx], (a,), vjp)


def take_per_row(a: Tensor, cols) -> Tensor:
    """out[i] = a[i, cols[i]]."""
    if a.ndim != 2:
        raise ShapeError(f"take_per_row needs a matrix, got {a.shape}")
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])
    ad = a.data

    def vjp(g):
        ga = np.zeros_like(ad)
        ga[rows, cols] = g
        return (ga,)

    return _node(ad[rows, cols], (a,), vjp)


def take_elem(a: Tensor, i: int) -> Tensor:
    """Scalar element of a vector, kept in the graph."""
    if a.ndim != 1:
        raise ShapeError(f"take_elem needs a vector, got {a.shape}")
    i = int(i)

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[i] = g
        return (ga,)

    return _node(a.data[i], (a,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"slice_cols needs a matrix, got {a.shape}")
    ad = a.data

    def vjp(g):
        ga = np.zeros_like(ad)
        ga[:, start:stop] = g
        return (ga,)

    return _node(ad[:, start:stop].copy(), (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def row_sum(a: Tensor) -> Tensor:
    """Sum each row of a matrix -> vector."""
    if a.ndim != 2:
        raise ShapeError(f"row_sum needs a matrix, got {a.shape}")
    cols = a.shape[1]
    return _node(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], cols, axis=1),))


def sum_all(a: Tensor) -> Tensor:
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(np.asarray(a.data.mean()), (a,), lambda g: (np.full_like(a.data, float(g) / n),))


def mul_rows(a: Tensor, v: Tensor) -> Tensor:
    """Scale row i of the matrix by v[i]."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ShapeError(f"mul_rows shapes {a.shape} x {v.shape}")
    ad, vd = a.data, v.data
    return _node(
        ad * vd[:, None],
        (a, v),
        lambda g: (g * vd[:, None], (g * ad).sum(axis=1)),
    )


def segsum_rows(a: Tensor, width: int) -> Tensor:
    """Sum consecutive groups of `width` rows: [R*W, d] -> [R, d]."""
    if a.ndim != 2 or a.shape[0] % width != 0:
        raise ShapeError(f"segsum_rows on {a.shape} with width {width}")
    r = a.shape[0] // width
    d = a.shape[1]
    return _node(
        a.data.reshape(r, width, d).sum(axis=1),
        (a,),
        lambda g: (np.repeat(g, width, axis=0),),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def xlogx(a: Tensor) -> Tensor:
    """x * log(x) with the 0*log(0) := 0 convention (entropy terms)."""
    x = a.data
    pos = x > 0
    y = np.zeros_like(x)
    y[pos] = x[pos] * np.log(x[pos])

    def vjp(g):
        gx = np.zeros_like(x)
        gx[pos] = g[pos] * (np.log(x[pos]) + 1.0)
        return (gx,)

    return _node(y, (a,), vjp)


def outer(u: Tensor, v: Tensor) -> Tensor:
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"outer needs vectors, got {u.shape}, {v.shape}")
    ud, vd = u.data, v.data
    return _node(np.outer(ud, vd), (u, v), lambda g: (g @ vd, g.T @ ud))


def frobenius_sq(a: Tensor) -> Tensor:
    return _node(np.asarray((a.data * a.data).sum()), (a,), lambda g: (2.0 * float(g) * a.data,))


def softmax_masked(a: Tensor, allowed: np.ndarray | None = None) -> Tensor:
    """Row softmax with exact zeros at masked positions.

    `allowed` is a boolean array (True = position participates); it may be
    omitted, and -inf logits are honored either way, matching the additive
    -inf masking convention. Raises InfeasibleSoftmaxError on a fully
    masked row.
    """
    squeeze = a.ndim == 1
    x = a.data[None, :] if squeeze else a.data
    if x.ndim != 2:
        raise ShapeError(f"softmax_masked needs a vector or matrix, got {a.shape}")
    if allowed is None:
        ok = np.isfinite(x) | (x == np.inf)
    else:
        allowed = np.asarray(allowed, dtype=bool)
        if squeeze:
            allowed = allowed[None, :]
        if allowed.shape != x.shape:
            raise ShapeError(f"mask shape {allowed.shape} vs logits {x.shape}")
        ok = allowed & np.isfinite(x)
    if not ok.any(axis=1).all():
        raise InfeasibleSoftmaxError("softmax row with no feasible entry")
    masked = np.where(ok, x, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - m)
    e[~ok] = 0.0
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        g2 = g[None, :] if squeeze else g
        dot = (g2 * p).sum(axis=1, keepdims=True)
        gx = p * (g2 - dot)
        return (gx[0] if squeeze else gx,)

    return _node(p[0] if squeeze else p, (a,), vjp)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization followed by a learned affine map."""
    squeeze = a.ndim == 1
    x = a.data[None, :] if squeeze else a.data
    if x.ndim != 2:
        raise ShapeError(f"layer_norm needs a vector or matrix, got {a.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}, {bias.shape} for width {d}")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = xhat * gain.data + bias.data

    def vjp(g):
        g2 = g[None, :] if squeeze else g
        dxhat = g2 * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g2 * xhat).sum(axis=0)
        dbias = g2.sum(axis=0)
        return (dx[0] if squeeze else dx, dgain, dbias)

    return _node(y[0] if squeeze else y, (a, gain, bias), vjp)


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------


class ParameterStore:
    """Flat registry of named parameters with unique, stable names."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.array(data, dtype=np.float64), trainable=trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, p in self._params.items():
            out.add(name, p.data.copy(), trainable=p.trainable)
        return out

    def load_values(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if strict and (missing or extra):
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in values.items():
            if name not in self._params:
                continue
            p = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}
