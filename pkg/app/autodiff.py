# ───────────────────────────────────────────────────────────────────────────────
# app/autodiff.py
"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

A Graph is a tape: every operation appends a GraphNode whose parents all have
smaller ids, so a reverse sweep over ids is a reverse topological order. The
tape is rebuilt on every forward pass; nothing is cached between passes.

Values are plain numpy float64 arrays ("tensors"). Var is the user-facing
handle to one node; it overloads the arithmetic operators so MLPs and losses
read like ordinary numpy code.

Broadcasting is limited to bias addition (matrix + row vector). Softmax is
always exp(x - log_sum_exp(x)); log_sum_exp is the single stabilization point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from app.core import ContractViolation, DimensionError, DomainError

Tensor = np.ndarray

# DCGAN convention for the negative-side slope.
DEFAULT_LEAKY_SLOPE = 0.2

ELEMENTWISE_TAGS = (
    "relu", "leaky_relu", "tanh", "exp", "log", "negate", "scale", "shift",
    "softplus", "sigmoid",
)

Adjoint = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_tensor(value) -> Tensor:
    """Copy `value` into a fresh C-ordered float64 array with positive dimensions."""
    arr = np.array(value, dtype=np.float64, order="C")
    if any(d <= 0 for d in arr.shape):
        raise ContractViolation(f"tensor dimensions must be positive, got shape {arr.shape}")
    return arr


@dataclass(eq=False)
class GraphNode:
    id: int
    op: str
    parents: Tuple[int, ...]
    value: Tensor
    grad: Tensor
    requires_grad: bool
    adjoint: Optional[Adjoint] = field(default=None, repr=False)


class Graph:
    """Append-only tape of GraphNodes."""

    def __init__(self) -> None:
        self.nodes: List[GraphNode] = []

    def leaf(self, value) -> "Var":
        """Register a differentiable input."""
        return self._append("leaf", (), as_tensor(value), None, requires_grad=True)

    def constant(self, value) -> "Var":
        """Register an input that never receives a gradient."""
        return self._append("const", (), as_tensor(value), None, requires_grad=False)

    def record(self, op: str, parents: Sequence["Var"], value: Tensor, adjoint: Adjoint) -> "Var":
        for p in parents:
            if p.graph is not self:
                raise ContractViolation(f"{op}: operands belong to different graphs")
        requires = any(self.nodes[p.id].requires_grad for p in parents)
        return self._append(
            op, tuple(p.id for p in parents), value, adjoint if requires else None, requires
        )

    def _append(self, op, parents, value, adjoint, requires_grad) -> "Var":
        node = GraphNode(
            id=len(self.nodes),
            op=op,
            parents=parents,
            value=value,
            grad=np.zeros_like(value),
            requires_grad=requires_grad,
            adjoint=adjoint,
        )
        self.nodes.append(node)
        return Var(self, node.id)


class Var:
    """Handle to one node of a Graph."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int) -> None:
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> GraphNode:
        return self.graph.nodes[self.id]

    @property
    def value(self) -> Tensor:
        return self.node.value

    @property
    def grad(self) -> Tensor:
        return self.node.grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.node.value.shape

    def __repr__(self) -> str:
        return f"<Var #{self.id} {self.node.op} shape={self.shape}>"

    def __add__(self, other: Union["Var", float]) -> "Var":
        if isinstance(other, Var):
            return add(self, other)
        return elementwise("shift", self, alpha=float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Var", float]) -> "Var":
        if isinstance(other, Var):
            return sub(self, other)
        return elementwise("shift", self, alpha=-float(other))

    def __rsub__(self, other: float) -> "Var":
        return elementwise("shift", elementwise("negate", self), alpha=float(other))

    def __mul__(self, other: Union["Var", float]) -> "Var":
        if isinstance(other, Var):
            return mul(self, other)
        return elementwise("scale", self, alpha=float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Var":
        return elementwise("negate", self)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)

    def sum(self) -> "Var":
        return reduce_sum(self)

    def mean(self) -> "Var":
        return reduce_mean(self)


# ── Structural ops ────────────────────────────────────────────────────────────

def matmul(a: Var, b: Var) -> Var:
    A, B = a.value, b.value
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError("matmul", A.shape, B.shape)
    return a.graph.record("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Var, b: Var) -> Var:
    """Elementwise sum; also matrix + row vector (bias addition)."""
    A, B = a.value, b.value
    if A.shape == B.shape:
        return a.graph.record("add", (a, b), A + B, lambda g: (g, g))
    if A.ndim == 2 and B.ndim == 1 and A.shape[1] == B.shape[0]:
        return a.graph.record("add_bias", (a, b), A + B, lambda g: (g, g.sum(axis=0)))
    raise DimensionError("add", A.shape, B.shape)


def sub(a: Var, b: Var) -> Var:
    A, B = a.value, b.value
    if A.shape != B.shape:
        raise DimensionError("sub", A.shape, B.shape)
    return a.graph.record("sub", (a, b), A - B, lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    A, B = a.value, b.value
    if A.shape != B.shape:
        raise DimensionError("mul", A.shape, B.shape)
    return a.graph.record("mul", (a, b), A * B, lambda g: (g * B, g * A))


def transpose(a: Var) -> Var:
    if a.value.ndim != 2:
        raise DimensionError("transpose", a.shape)
    return a.graph.record("transpose", (a,), np.ascontiguousarray(a.value.T), lambda g: (g.T,))


def reshape(a: Var, shape: Sequence[int]) -> Var:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.value.size:
        raise DimensionError("reshape", a.shape, shape)
    old = a.shape
    return a.graph.record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Var]) -> Var:
    """Concatenate 1-d vectors."""
    if not parts:
        raise ContractViolation("concat: nothing to concatenate")
    for p in parts:
        if p.value.ndim != 1:
            raise DimensionError("concat", *(q.shape for q in parts))
    sizes = [p.value.size for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    value = np.concatenate([p.value for p in parts])
    return parts[0].graph.record(
        "concat", tuple(parts), value, lambda g: tuple(np.split(g, cuts))
    )


def reduce_sum(a: Var) -> Var:
    shape = a.shape
    return a.graph.record(
        "sum", (a,), np.array(a.value.sum()), lambda g: (np.full(shape, float(g)),)
    )


def reduce_mean(a: Var) -> Var:
    shape, n = a.shape, a.value.size
    return a.graph.record(
        "mean", (a,), np.array(a.value.mean()), lambda g: (np.full(shape, float(g) / n),)
    )


# ── Elementwise ops ───────────────────────────────────────────────────────────

def elementwise(op_tag: str, x: Var, alpha: Optional[float] = None) -> Var:
    """Apply one elementwise function. `alpha` is the leaky slope, the scale
    factor or the shift, depending on the tag.

    exp saturates to +inf above ~709.78; every other tag is finite on finite input.
    """
    X = x.value
    if op_tag == "relu":
        mask = X > 0.0  # subgradient 0 at exactly 0
        return x.graph.record("relu", (x,), np.where(mask, X, 0.0), lambda g: (g * mask,))
    if op_tag == "leaky_relu":
        slope = DEFAULT_LEAKY_SLOPE if alpha is None else float(alpha)
        factor = np.where(X > 0.0, 1.0, slope)
        return x.graph.record("leaky_relu", (x,), X * factor, lambda g: (g * factor,))
    if op_tag == "tanh":
        Y = np.tanh(X)
        return x.graph.record("tanh", (x,), Y, lambda g: (g * (1.0 - Y * Y),))
    if op_tag == "exp":
        Y = np.exp(X)
        return x.graph.record("exp", (x,), Y, lambda g: (g * Y,))
    if op_tag == "log":
        invalid = ~(X > 0.0)
        if invalid.any():
            idx = tuple(int(i) for i in np.unravel_index(int(np.argmax(invalid)), X.shape))
            raise DomainError("log", idx, float(X[idx]))
        return x.graph.record("log", (x,), np.log(X), lambda g: (g / X,))
    if op_tag == "negate":
        return x.graph.record("negate", (x,), -X, lambda g: (-g,))
    if op_tag == "scale":
        if alpha is None:
            raise ContractViolation("scale: alpha is required")
        c = float(alpha)
        return x.graph.record("scale", (x,), c * X, lambda g: (c * g,))
    if op_tag == "shift":
        if alpha is None:
            raise ContractViolation("shift: alpha is required")
        c = float(alpha)
        return x.graph.record("shift", (x,), X + c, lambda g: (g,))
    if op_tag == "softplus":
        # logaddexp(0, x) = ln(1 + e^x) without overflow
        return x.graph.record("softplus", (x,), np.logaddexp(0.0, X), lambda g: (g * expit(X),))
    if op_tag == "sigmoid":
        Y = expit(X)
        return x.graph.record("sigmoid", (x,), Y, lambda g: (g * Y * (1.0 - Y),))
    raise ContractViolation(f"unknown elementwise op '{op_tag}'. Allowed: {', '.join(ELEMENTWISE_TAGS)}")


def log_sum_exp(x: Var) -> Var:
    """ln Σ exp(x) over a non-empty vector, stable for large |x|."""
    X = x.value
    if X.ndim != 1:
        raise DimensionError("log_sum_exp", X.shape)
    if X.size == 0:
        raise ContractViolation("log_sum_exp: empty input")
    value = logsumexp(X)
    return x.graph.record(
        "log_sum_exp", (x,), np.array(value), lambda g: (float(g) * np.exp(X - value),)
    )


def softmax(x: Var) -> Var:
    return elementwise("exp", x - broadcast_scalar(log_sum_exp(x), x.shape))


def broadcast_scalar(s: Var, shape: Tuple[int, ...]) -> Var:
    """Repeat a scalar node over `shape` (used for softmax normalization)."""
    if s.value.size != 1:
        raise DimensionError("broadcast_scalar", s.shape, shape)
    return s.graph.record(
        "broadcast", (s,), np.full(shape, float(s.value)), lambda g: (np.array(g.sum()),)
    )


# ── Reverse sweep ─────────────────────────────────────────────────────────────

def backward(root: Var) -> Dict[int, Tensor]:
    """Accumulate d(root)/d(node) into every node reachable from `root`.

    Returns the gradients of the reachable leaves keyed by node id. Gradients
    from multiple paths add up. Calling backward twice on the same graph
    recomputes from scratch.
    """
    graph = root.graph
    if root.value.size != 1:
        raise ContractViolation(f"backward: root must be scalar, got shape {root.shape}")

    nodes = graph.nodes
    for node in nodes[: root.id + 1]:
        node.grad = np.zeros_like(node.value)
    nodes[root.id].grad = np.ones_like(nodes[root.id].value)

    reached = {root.id}
    leaves: Dict[int, Tensor] = {}
    for i in range(root.id, -1, -1):
        if i not in reached:
            continue
        node = nodes[i]
        if node.op == "leaf":
            leaves[i] = node.grad
            continue
        if node.adjoint is None:
            continue
        for pid, pgrad in zip(node.parents, node.adjoint(node.grad)):
            parent = nodes[pid]
            if pgrad is None or not parent.requires_grad:
                continue
            parent.grad = parent.grad + np.reshape(pgrad, parent.value.shape)
            reached.add(pid)
    return leaves


# ── Finite-difference oracle ──────────────────────────────────────────────────

def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_check_many(
    f: Callable[[List[Var]], Var],
    xs: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max relative error between backward() and central differences over
    every coordinate of every input in `xs`."""
    if h <= 0:
        raise ContractViolation("finite_diff_check: step h must be positive")
    xs = [as_tensor(x) for x in xs]

    graph = Graph()
    handles = [graph.leaf(x) for x in xs]
    backward(f(handles))
    analytic = [h_.grad.copy() for h_ in handles]

    def evaluate(values: List[Tensor]) -> float:
        g = Graph()
        return float(f([g.leaf(v) for v in values]).value)

    worst = 0.0
    for k, x in enumerate(xs):
        numeric = np.zeros_like(x)
        for i in range(x.size):
            plus = [v.copy() for v in xs]
            minus = [v.copy() for v in xs]
            plus[k].flat[i] += h
            minus[k].flat[i] -= h
            numeric.flat[i] = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
        worst = max(worst, _relative_error(analytic[k], numeric, floor))
    return worst


def finite_diff_check(
    f: Callable[[Var], Var], x: Tensor, h: float = 1e-5, floor: float = 1e-8
) -> float:
    return finite_diff_check_many(lambda vs: f(vs[0]), [x], h=h, floor=floor)
