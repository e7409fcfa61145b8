# services/autodiff.py
# Reverse-mode differentiation over numpy arrays for the small dense networks in this package.
# Primitives: affine, elementwise activation, segment sum/mean pooling, gather, softmax, log,
# concatenation, plus the add/mul/sum needed to write losses.

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from errors import NumericalError, StructuralError
from models.network import NetworkParams


class Tensor:
    """A node of the computation graph: a value plus how to push gradients to its parents."""

    __slots__ = ("value", "parents", "backward_fn", "op", "grad", "requires_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], tuple] | None = None,
        op: str = "leaf",
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other) -> "Tensor":
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(_lift(other)))

    def __mul__(self, other) -> "Tensor":
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


def constant(value) -> Tensor:
    return Tensor(value, op="constant")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericalError("non-finite value in forward pass", node=op)
    return Tensor(value, parents, backward_fn, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise and reductions ---

def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def total(a: Tensor) -> Tensor:
    """Sum of all entries (scalar)."""
    return _node(np.asarray(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    return _node(np.asarray(a.value.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


def relu(a: Tensor) -> Tensor:
    active = a.value > 0
    return _node(np.where(active, a.value, 0.0), (a,), lambda g: (g * active,), "relu")


def activation(a: Tensor, tag: str) -> Tensor:
    if tag == "relu":
        return relu(a)
    if tag == "linear":
        return a
    raise StructuralError(f"unknown activation tag {tag!r}")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of max(a, floor); entries at or below the floor pass no gradient."""
    clipped = np.maximum(a.value, floor) if floor > 0 else a.value
    live = a.value > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(clipped)
    return _node(out, (a,), lambda g: (np.where(live, g / np.where(live, a.value, 1.0), 0.0),), "log")


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), backward, "softmax")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward, "concat")


# --- dense layers ---

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ W^T + b for x of shape (n, in) or (in,)."""
    if x.shape[-1] != w.shape[1]:
        raise StructuralError(f"affine expects input dim {w.shape[1]}, got {x.shape[-1]}")

    def backward(g):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(x.value)
        gx = g2 @ w.value
        return (gx.reshape(x.shape), g2.T @ x2, g2.sum(axis=0))

    return _node(x.value @ w.value.T + b.value, (x, w, b), backward, "affine")


# --- pooling over contiguous segments ---

@dataclass(frozen=True)
class Segments:
    """
    Contiguous row segments: rows starts[k]..starts[k+1]-1 belong to segment k.
    `weights` scale each row when pooled (mask / count for mean pooling, mask for sum).
    """
    starts: np.ndarray
    ids: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return int(self.starts.shape[0])

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], weights: np.ndarray | None = None) -> "Segments":
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.size == 0 or np.any(sizes < 1):
            raise StructuralError("every segment needs at least one row")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        ids = np.repeat(np.arange(sizes.size), sizes)
        w = np.ones(int(sizes.sum())) if weights is None else np.asarray(weights, dtype=np.float64)
        return cls(starts=starts, ids=ids, weights=w)


def segment_pool(x: Tensor, seg: Segments) -> Tensor:
    """Weighted sum of the rows of each segment -> (segments, d)."""
    w = seg.weights[:, None]
    out = np.add.reduceat(x.value * w, seg.starts, axis=0)
    return _node(out, (x,), lambda g: (g[seg.ids] * w,), "segment_pool")


def gather(x: Tensor, seg: Segments) -> Tensor:
    """Repeat the row of each segment for every row in that segment."""
    return _node(x.value[seg.ids], (x,), lambda g: (np.add.reduceat(g, seg.starts, axis=0),), "gather")


# --- graph traversal ---

def backward(root: Tensor) -> None:
    """Accumulate d root / d node into .grad of every node that requires a gradient."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if not parent.requires_grad:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient", node=node.op)
            parent.grad = g if parent.grad is None else parent.grad + g


class BoundParams:
    """Leaf tensors for every weight and bias of a NetworkParams, ready for a forward pass."""

    def __init__(self, params: NetworkParams, requires_grad: bool = True):
        self.params = params
        self.weights = [Tensor(params.weight(i), requires_grad=requires_grad) for i in range(len(params.layers))]
        self.biases = [Tensor(params.bias(i), requires_grad=requires_grad) for i in range(len(params.layers))]

    def layers(self, prefix: str | None = None) -> list[tuple[Tensor, Tensor, str]]:
        """(W, b, activation) of the subnet `prefix`, or of every layer when prefix is None."""
        idx = range(len(self.params.layers)) if prefix is None else self.params.layer_indices(prefix)
        out = [(self.weights[i], self.biases[i], self.params.layers[i].activation) for i in idx]
        if not out:
            raise StructuralError(f"no subnet named {prefix!r}")
        return out

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat_grad(self) -> np.ndarray:
        parts = []
        for t in self.tensors():
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            parts.append(g.reshape(-1))
        return np.concatenate(parts)


def mlp(layers: Sequence[tuple[Tensor, Tensor, str]], x: Tensor) -> Tensor:
    for w, b, act in layers:
        x = activation(affine(x, w, b), act)
    return x


def mlp_forward(params: NetworkParams, inputs) -> np.ndarray:
    """Evaluate a dense chain on one input vector or a batch of row vectors."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1] != params.layers[0].in_dim:
        raise StructuralError(f"input has dim {x.shape[-1]}, first layer expects {params.layers[0].in_dim}")
    for prev, nxt in zip(params.layers, params.layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise StructuralError(f"{prev.name} -> {nxt.name} is not a chain")
    bound = BoundParams(params, requires_grad=False)
    return mlp(bound.layers(), constant(x)).value


def value_and_grad(loss: Callable[[BoundParams], Tensor], params: NetworkParams) -> tuple[float, np.ndarray]:
    """Loss value and d loss / d phi as a flat vector aligned with params.values."""
    bound = BoundParams(params)
    out = loss(bound)
    if out.value.size != 1:
        raise StructuralError("loss must be scalar")
    if not out.requires_grad:
        return float(out.value), np.zeros(params.total_count)
    backward(out)
    return float(out.value), bound.flat_grad()


def grad(loss: Callable[[BoundParams], Tensor], params: NetworkParams) -> np.ndarray:
    return value_and_grad(loss, params)[1]
