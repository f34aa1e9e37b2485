"""Dense-matrix computation kernel with reverse-mode differentiation.

Everything is a 2-D float64 matrix. Scalars are 1x1, vectors are nx1
columns. Operations build a computation graph on the fly; ``backward``
topologically orders the recorded operations into a :class:`Tape` and
replays their backward rules in reverse, accumulating gradients
additively into every ``requires_grad`` leaf.

Broadcasting is deliberately restricted to same-shape and
scalar-with-matrix so that every backward rule stays auditable.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def _as_matrix(values) -> Array:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D matrices; got an array of shape {arr.shape}")
    return arr


class Tensor:
    """A node in the computation graph holding a dense float64 matrix.

    Leaves created with ``requires_grad=True`` receive gradients in
    ``grad`` when :func:`backward` runs on a scalar descendant. Non-leaf
    nodes record the tensors they were computed from and a backward
    rule closure; they are transient and rebuilt on every forward pass.
    """

    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_rule", "name")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        *,
        parents: tuple["Tensor", ...] = (),
        backward_rule: Callable[[Array], None] | None = None,
        name: str = "",
    ):
        self.values: Array = _as_matrix(values)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.parents = parents
        self.backward_rule = backward_rule
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() requires a scalar tensor; got shape {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; non-Tensor operands become constants.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __neg__(self):
        return neg(self)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(values, name: str = "") -> Tensor:
    """A tensor that never receives gradients (masks, labels, selectors)."""
    return Tensor(values, requires_grad=False, name=name)


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _check_binary(a: Array, b: Array, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _fit(g: Array, shape: tuple[int, int]) -> Array:
    """Reduce an output gradient onto an operand of the given shape."""
    if g.shape == shape:
        return g
    # Only the scalar-with-matrix case remains: sum everything.
    return np.array([[g.sum()]])


class Tape:
    """Topologically ordered record of the operations reaching a root.

    ``operations`` lists graph nodes with inputs always preceding the
    nodes computed from them; each non-leaf entry carries its input
    nodes and backward rule. Replaying the rules in reverse order
    accumulates gradients additively into every reachable leaf.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        visited = {id(root)}
        stack: list[tuple[Tensor, int]] = [(root, 0)]
        while stack:
            node, idx = stack[-1]
            if idx < len(node.parents):
                stack[-1] = (node, idx + 1)
                parent = node.parents[idx]
                if parent.requires_grad and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, 0))
            else:
                order.append(node)
                stack.pop()
        self.operations = order

    def replay_backward(self) -> None:
        for node in reversed(self.operations):
            if node.backward_rule is not None and node.grad is not None:
                node.backward_rule(node.grad)


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf with d(root)/d(leaf).

    The root must be a scalar. Repeated calls without zeroing leaf
    gradients accumulate; intermediate node gradients are reset on each
    call so the replay itself is not double-counted.
    """
    if root.values.size != 1:
        raise ContractError(f"backward requires a scalar root; got shape {root.shape}")
    if not root.requires_grad:
        return
    tape = Tape(root)
    for node in tape.operations:
        if node.backward_rule is not None:
            node.grad = None
    _accumulate(root, np.ones((1, 1)))
    tape.replay_backward()


# ---------------------------------------------------------------------------
# Operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product (m,k) @ (k,n) -> (m,n)."""
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree for shapes {a.values.shape} and {b.values.shape}"
        )
    out_values = a.values @ b.values

    def rule(g: Array, a=a, b=b) -> None:
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return Tensor(out_values, parents=(a, b), backward_rule=rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a.values, b.values, "add")
    out_values = a.values + b.values

    def rule(g: Array, a=a, b=b) -> None:
        _accumulate(a, _fit(g, a.values.shape))
        _accumulate(b, _fit(g, b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_rule=rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a.values, b.values, "sub")
    out_values = a.values - b.values

    def rule(g: Array, a=a, b=b) -> None:
        _accumulate(a, _fit(g, a.values.shape))
        _accumulate(b, _fit(-g, b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_rule=rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a 1x1 scalar."""
    _check_binary(a.values, b.values, "mul")
    out_values = a.values * b.values

    def rule(g: Array, a=a, b=b) -> None:
        _accumulate(a, _fit(g * b.values, a.values.shape))
        _accumulate(b, _fit(g * a.values, b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_rule=rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient; one operand may be a 1x1 scalar."""
    _check_binary(a.values, b.values, "div")
    out_values = a.values / b.values

    def rule(g: Array, a=a, b=b) -> None:
        _accumulate(a, _fit(g / b.values, a.values.shape))
        _accumulate(b, _fit(-g * a.values / (b.values * b.values), b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_rule=rule)


def neg(a: Tensor) -> Tensor:
    def rule(g: Array, a=a) -> None:
        _accumulate(a, -g)

    return Tensor(-a.values, parents=(a,), backward_rule=rule)


def transpose(a: Tensor) -> Tensor:
    def rule(g: Array, a=a) -> None:
        _accumulate(a, g.T)

    return Tensor(a.values.T, parents=(a,), backward_rule=rule)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 scalar."""

    def rule(g: Array, a=a) -> None:
        _accumulate(a, np.full_like(a.values, g[0, 0]))

    return Tensor([[a.values.sum()]], parents=(a,), backward_rule=rule)


def row_sums(a: Tensor) -> Tensor:
    """Sum along each row, (n,m) -> (n,1)."""

    def rule(g: Array, a=a) -> None:
        _accumulate(a, np.broadcast_to(g, a.values.shape).copy())

    return Tensor(a.values.sum(axis=1, keepdims=True), parents=(a,), backward_rule=rule)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    out_values = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def rule(g: Array, a=a, s=out_values) -> None:
        _accumulate(a, g * s * (1.0 - s))

    return Tensor(out_values, parents=(a,), backward_rule=rule)


def log(a: Tensor) -> Tensor:
    """Natural log; the caller is responsible for a positive domain."""

    def rule(g: Array, a=a) -> None:
        _accumulate(a, g / a.values)

    return Tensor(np.log(a.values), parents=(a,), backward_rule=rule)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    x = a.values
    out_values = np.where(x >= 0, x, slope * x)

    def rule(g: Array, a=a, slope=slope) -> None:
        _accumulate(a, g * np.where(a.values >= 0, 1.0, slope))

    return Tensor(out_values, parents=(a,), backward_rule=rule)


def elu(a: Tensor, alpha: float) -> Tensor:
    x = a.values
    out_values = np.where(x >= 0, x, alpha * np.expm1(x))

    def rule(g: Array, a=a, alpha=alpha, out=out_values) -> None:
        # For x < 0 the derivative alpha*exp(x) equals out + alpha.
        _accumulate(a, g * np.where(a.values >= 0, 1.0, out + alpha))

    return Tensor(out_values, parents=(a,), backward_rule=rule)


def max0(a: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at the kink."""

    def rule(g: Array, a=a) -> None:
        _accumulate(a, g * (a.values > 0))

    return Tensor(np.maximum(a.values, 0.0), parents=(a,), backward_rule=rule)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only strictly inside."""

    def rule(g: Array, a=a, lo=lo, hi=hi) -> None:
        _accumulate(a, g * ((a.values > lo) & (a.values < hi)))

    return Tensor(np.clip(a.values, lo, hi), parents=(a,), backward_rule=rule)


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward (bitwise), zero gradient backward.

    The result is detached: it has no parents and never requires a
    gradient, so backward propagates exactly zero into ``a`` while
    gradients elsewhere in the graph are unaffected.
    """
    return Tensor(a.values.copy())


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows start:stop as a new tensor; backward zero-pads the rest."""
    n = a.values.shape[0]
    if not (0 <= start < stop <= n):
        raise ContractError(f"slice_rows: invalid range [{start}, {stop}) for {n} rows")

    def rule(g: Array, a=a, start=start, stop=stop) -> None:
        if a.requires_grad:
            padded = np.zeros_like(a.values)
            padded[start:stop] = g
            _accumulate(a, padded)

    return Tensor(a.values[start:stop].copy(), parents=(a,), backward_rule=rule)
