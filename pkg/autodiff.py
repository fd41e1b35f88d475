"""
Reverse-Mode Automatic Differentiation
Dense float64 tensors of rank <= 2 with a creation-ordered tape
"""

import itertools
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from error_handling import ShapeError, ValidationError

_node_ids = itertools.count()

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Operand = Union["DiffValue", float, int, np.ndarray]


class DiffValue:
    """A node in the computation graph: value, accumulated gradient, parents"""

    __slots__ = ("data", "grad", "parents", "name", "op", "requires_grad", "_backward", "_id")

    def __init__(
        self,
        data,
        parents: Sequence["DiffValue"] = (),
        backward: Optional[Backward] = None,
        op: str = "const",
        name: Optional[str] = None,
        requires_grad: Optional[bool] = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(op, arr.shape, detail="rank must be <= 2")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self._id = next(_node_ids)

    @classmethod
    def leaf(cls, data, name: Optional[str] = None) -> "DiffValue":
        """Trainable input; the array is copied"""
        return cls(np.array(data, dtype=np.float64), op="leaf", name=name, requires_grad=True)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"DiffValue({self.op}{label}, shape={self.shape})"

    def __add__(self, other: Operand) -> "DiffValue":
        return add(self, other)

    def __radd__(self, other: Operand) -> "DiffValue":
        return add(other, self)

    def __sub__(self, other: Operand) -> "DiffValue":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "DiffValue":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "DiffValue":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "DiffValue":
        return mul(other, self)

    def __neg__(self) -> "DiffValue":
        return scale(self, -1.0)

    def __matmul__(self, other: "DiffValue") -> "DiffValue":
        return matmul(self, other)


def constant(data) -> DiffValue:
    """Non-trainable value"""
    return DiffValue(data, op="const", requires_grad=False)


def as_value(x: Operand) -> DiffValue:
    return x if isinstance(x, DiffValue) else constant(x)


class Tape:
    """Nodes reachable from a root, in creation order (a topological order)"""

    def __init__(self, nodes: List[DiffValue]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: DiffValue) -> "Tape":
        seen: Dict[int, DiffValue] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node._id in seen:
                continue
            seen[node._id] = node
            stack.extend(p for p in node.parents if p._id not in seen)
        return cls(sorted(seen.values(), key=lambda n: n._id))

    def leaves(self) -> List[DiffValue]:
        return [n for n in self.nodes if not n.parents and n.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[DiffValue]:
        return iter(self.nodes)


def backpropagate(root: DiffValue) -> Dict[str, np.ndarray]:
    """
    Accumulate d(root)/d(node) into every node's grad

    Args:
        root: Scalar (single-element) output node

    Returns:
        Gradients of the named leaves, keyed by leaf name
    """
    if root.data.size != 1:
        raise ShapeError("backpropagate", root.shape, detail="root must be scalar")

    tape = Tape.from_root(root)
    root.grad = np.ones_like(root.data)

    for node in reversed(tape.nodes):
        if node._backward is None or not node.requires_grad:
            continue
        contributions = node._backward(node.grad)
        for parent, contrib in zip(node.parents, contributions):
            if contrib is None or not parent.requires_grad:
                continue
            np.add(parent.grad, contrib, out=parent.grad)

    return {leaf.name: leaf.grad for leaf in tape.leaves() if leaf.name}


def _broadcast_shape(op: str, a: DiffValue, b: DiffValue) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Operand, b: Operand) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return DiffValue(a.data + b.data, (a, b), backward, op="add")


def sub(a: Operand, b: Operand) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return DiffValue(a.data - b.data, (a, b), backward, op="sub")


def mul(a: Operand, b: Operand) -> DiffValue:
    """Elementwise product with numpy broadcasting"""
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return DiffValue(a.data * b.data, (a, b), backward, op="mul")


def scale(a: DiffValue, factor: float) -> DiffValue:
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return DiffValue(a.data * factor, (a,), backward, op="scale")


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    """Matrix-matrix, matrix-vector, vector-matrix or dot product"""
    a, b = as_value(a), as_value(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return DiffValue(A @ B, (a, b), backward, op="matmul")


def transpose(a: DiffValue) -> DiffValue:
    def backward(g):
        return (g.T,)

    return DiffValue(a.data.T, (a,), backward, op="transpose")


def tanh(a: DiffValue) -> DiffValue:
    y = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return DiffValue(y, (a,), backward, op="tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: DiffValue) -> DiffValue:
    y = _sigmoid(a.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return DiffValue(y, (a,), backward, op="sigmoid")


def softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / shifted.sum()


def log_softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    return shifted - np.log(np.exp(shifted).sum())


def _require_vector(op: str, a: DiffValue):
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError(op, a.shape, detail="expected a non-empty vector")


def softmax(a: DiffValue) -> DiffValue:
    _require_vector("softmax", a)
    y = softmax_array(a.data)

    def backward(g):
        return (y * (g - np.dot(g, y)),)

    return DiffValue(y, (a,), backward, op="softmax")


def log_softmax(a: DiffValue) -> DiffValue:
    _require_vector("log_softmax", a)
    y = log_softmax_array(a.data)

    def backward(g):
        return (g - np.exp(y) * g.sum(),)

    return DiffValue(y, (a,), backward, op="log_softmax")


def total(a: DiffValue) -> DiffValue:
    """Sum of all entries as a scalar"""

    def backward(g):
        return (np.full(a.shape, float(g)),)

    return DiffValue(a.data.sum(), (a,), backward, op="sum")


def pick(a: DiffValue, index: int) -> DiffValue:
    """Scalar entry a[index] of a vector"""
    _require_vector("pick", a)
    if not 0 <= index < a.shape[0]:
        raise ShapeError("pick", a.shape, detail=f"index {index} out of range")

    def backward(g):
        out = np.zeros(a.shape)
        out[index] = g
        return (out,)

    return DiffValue(a.data[index], (a,), backward, op="pick")


def take_slice(a: DiffValue, start: int, stop: int) -> DiffValue:
    _require_vector("slice", a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError("slice", a.shape, detail=f"bad range [{start}, {stop})")

    def backward(g):
        out = np.zeros(a.shape)
        out[start:stop] = g
        return (out,)

    return DiffValue(a.data[start:stop], (a,), backward, op="slice")


def concat(values: Sequence[DiffValue]) -> DiffValue:
    """Concatenate vectors"""
    values = [as_value(v) for v in values]
    if not values or any(v.data.ndim != 1 for v in values):
        raise ShapeError("concat", *[v.shape for v in values], detail="expected vectors")
    bounds = np.cumsum([0] + [v.shape[0] for v in values])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(values)))

    return DiffValue(np.concatenate([v.data for v in values]), values, backward, op="concat")


def stack_rows(values: Sequence[DiffValue]) -> DiffValue:
    """Stack equal-length vectors into a matrix"""
    values = [as_value(v) for v in values]
    if not values or any(v.data.ndim != 1 or v.shape != values[0].shape for v in values):
        raise ShapeError("stack_rows", *[v.shape for v in values], detail="expected equal-length vectors")

    def backward(g):
        return tuple(g[i] for i in range(len(values)))

    return DiffValue(np.stack([v.data for v in values]), values, backward, op="stack_rows")


def embedding(table: DiffValue, index: int) -> DiffValue:
    """Row lookup table[index]"""
    if table.data.ndim != 2 or not 0 <= index < table.shape[0]:
        raise ShapeError("embedding", table.shape, detail=f"index {index}")

    def backward(g):
        out = np.zeros(table.shape)
        out[index] = g
        return (out,)

    return DiffValue(table.data[index], (table,), backward, op="embedding")


def dropout(a: DiffValue, rate: float, rng: Optional[np.random.Generator], train_mode: bool) -> DiffValue:
    """Inverted dropout: scale kept units by 1/keep at train time, identity otherwise"""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return a
    if rng is None:
        raise ValidationError("dropout in train mode needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep

    def backward(g):
        return (g * mask,)

    return DiffValue(a.data * mask, (a,), backward, op="dropout")


Program = Callable[[Mapping[str, DiffValue]], DiffValue]


def evaluate_graph(inputs: Mapping[str, np.ndarray], program: Program) -> Tuple[DiffValue, Dict[str, DiffValue]]:
    """
    Wrap named arrays as leaves and run a program over them

    Returns:
        (root node, the leaves by name)
    """
    leaves = {name: DiffValue.leaf(value, name=name) for name, value in inputs.items()}
    return program(leaves), leaves


def check_gradient(
    program: Program,
    inputs: Mapping[str, np.ndarray],
    leaf: str,
    h: float = 1e-5,
) -> float:
    """
    Compare the analytic gradient of one leaf with central differences

    Returns:
        max over entries of |analytic - numeric| / max(1, |analytic|)
    """
    if h <= 0:
        raise ValidationError(f"step h must be positive, got {h}")
    if leaf not in inputs:
        raise ValidationError(f"unknown leaf {leaf!r}")

    root, leaves = evaluate_graph(inputs, program)
    backpropagate(root)
    analytic = leaves[leaf].grad

    base = {name: np.array(value, dtype=np.float64) for name, value in inputs.items()}
    target = base[leaf]
    numeric = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        original = target[idx]
        target[idx] = original + h
        plus = float(program({n: constant(v) for n, v in base.items()}).data)
        target[idx] = original - h
        minus = float(program({n: constant(v) for n, v in base.items()}).data)
        target[idx] = original
        numeric[idx] = (plus - minus) / (2.0 * h)

    if numeric.size == 0:
        return 0.0
    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(errors.max())


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: Optional[float]) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale gradients so their joint L2 norm is at most max_norm (None disables)"""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm
