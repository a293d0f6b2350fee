"""Dense tensors and a recording tape for reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Tensors created through a
:class:`ComputeGraph` (parameters, inputs, constants) carry a node id; every
operation applied to such a tensor appends a node to the same graph, so the
node list is always in topological order. Tensors without a graph are plain
values and operations on them record nothing (inference mode).

The dtype of the data is preserved: float32 is the default, and a graph built
with ``dtype=np.float64`` evaluates the same computation in 64-bit, which is
what the gradient checker relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ShapeError

# vjp(grad_out, needs) -> one gradient (or None) per input
VJP = Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]


class Parameter:
    """A named array that a graph can bind as a trainable leaf."""

    def __init__(self, name: str, data: np.ndarray, trainable: bool = True):
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def tensor(self, graph: "ComputeGraph | None" = None) -> "Tensor":
        """Bind this parameter into ``graph`` (or return a constant view)."""
        if graph is None:
            return Tensor(self.data)
        return graph.parameter(self)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class Node:
    """One tape entry: a leaf (parameter or input) or an op result."""

    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: VJP | None = None
    params: dict[str, Any] = field(default_factory=dict)
    requires_grad: bool = False
    trainable: bool = False
    parameter: Parameter | None = None


class Tensor:
    """Array value, optionally attached to a node of a :class:`ComputeGraph`."""

    __slots__ = ("data", "graph", "node")
    __array_priority__ = 1000

    def __init__(self, data: Any, graph: "ComputeGraph | None" = None, node: int | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def requires_grad(self) -> bool:
        return self.graph is not None and self.graph.nodes[self.node].requires_grad

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


class Gradients:
    """Gradients of every trainable leaf of a graph after :meth:`ComputeGraph.backward`."""

    def __init__(self, graph: "ComputeGraph", grads: list[np.ndarray | None]):
        self._graph = graph
        self._grads = grads

    def _node_grad(self, node_id: int) -> np.ndarray:
        grad = self._grads[node_id]
        if grad is None:
            grad = np.zeros_like(self._graph.nodes[node_id].value)
        return grad

    def __getitem__(self, key: "Parameter | Tensor") -> np.ndarray:
        if isinstance(key, Parameter):
            node_id = self._graph.node_of(key)
            if node_id is None:
                return np.zeros(key.shape, dtype=self._graph.dtype)
            return self._node_grad(node_id)
        if key.graph is not self._graph:
            raise ShapeError("tensor does not belong to this graph")
        return self._node_grad(key.node)

    def parameters(self) -> dict[Parameter, np.ndarray]:
        """Gradient per bound trainable parameter, zeros where untouched."""
        out: dict[Parameter, np.ndarray] = {}
        for node_id, node in enumerate(self._graph.nodes):
            if node.parameter is not None and node.trainable:
                out[node.parameter] = self._node_grad(node_id)
        return out

    def leaves(self) -> list[np.ndarray]:
        """Gradient of every trainable leaf, in node order."""
        return [
            self._node_grad(i) for i, node in enumerate(self._graph.nodes)
            if node.trainable
        ]


class ComputeGraph:
    """Ordered tape of nodes; inputs always refer to earlier nodes."""

    def __init__(self, dtype: Any = np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self._bound: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def parameter(self, param: Parameter) -> Tensor:
        """Leaf for ``param``; binding the same parameter twice reuses the node."""
        node_id = self._bound.get(id(param))
        if node_id is None:
            value = np.ascontiguousarray(param.data, dtype=self.dtype)
            node_id = self._append(Node(
                kind="parameter",
                inputs=(),
                value=value,
                params={"name": param.name},
                requires_grad=param.trainable,
                trainable=param.trainable,
                parameter=param,
            ))
            self._bound[id(param)] = node_id
        return Tensor(self.nodes[node_id].value, self, node_id)

    def node_of(self, param: Parameter) -> int | None:
        return self._bound.get(id(param))

    def input(self, data: Any, trainable: bool = False, name: str | None = None) -> Tensor:
        value = np.ascontiguousarray(np.asarray(data), dtype=self.dtype)
        node_id = self._append(Node(
            kind="input",
            inputs=(),
            value=value,
            params={"name": name} if name else {},
            requires_grad=trainable,
            trainable=trainable,
        ))
        return Tensor(value, self, node_id)

    def constant(self, data: Any) -> Tensor:
        return self.input(data, trainable=False)

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        value: np.ndarray,
        vjp: VJP,
        **params: Any,
    ) -> Tensor:
        ids = []
        requires = False
        for t in inputs:
            if t.graph is None:
                t = self.constant(t.data)
            elif t.graph is not self:
                raise ShapeError(f"{kind}: inputs belong to different graphs")
            ids.append(t.node)
            requires = requires or self.nodes[t.node].requires_grad
        node_id = self._append(Node(
            kind=kind,
            inputs=tuple(ids),
            value=value,
            vjp=vjp if requires else None,
            params=params,
            requires_grad=requires,
        ))
        return Tensor(value, self, node_id)

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse accumulation from a scalar ``loss`` node."""
        if loss.graph is not self:
            raise ShapeError("loss does not belong to this graph")
        if any(extent != 1 for extent in loss.shape):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for node_id in range(loss.node, -1, -1):
            node = self.nodes[node_id]
            grad = grads[node_id]
            if grad is None or node.vjp is None:
                continue
            needs = tuple(self.nodes[i].requires_grad for i in node.inputs)
            for input_id, need, in_grad in zip(node.inputs, needs, node.vjp(grad, needs)):
                if not need or in_grad is None:
                    continue
                current = grads[input_id]
                grads[input_id] = in_grad if current is None else current + in_grad
        return Gradients(self, grads)


def backward(graph: ComputeGraph, loss: Tensor) -> Gradients:
    return graph.backward(loss)


def as_tensor(value: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(value, dtype=dtype))


def _graph_of(tensors: Iterable[Tensor]) -> ComputeGraph | None:
    graph = None
    for t in tensors:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ShapeError("operands belong to different graphs")
            graph = t.graph
    return graph


def apply(kind: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: VJP, **params: Any) -> Tensor:
    """Wrap ``value`` as an op result, recording it when any input is on a graph."""
    graph = _graph_of(inputs)
    if graph is None:
        return Tensor(value)
    return graph.record(kind, inputs, value, vjp, **params)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _operands(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# -- elementwise arithmetic -------------------------------------------------

def add(a: Any, b: Any) -> Tensor:
    a, b = _operands(a, b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return apply("add", (a, b), a.data + b.data, vjp)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _operands(a, b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return apply("sub", (a, b), a.data - b.data, vjp)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _operands(a, b)

    def vjp(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return apply("mul", (a, b), a.data * b.data, vjp)


def div(a: Any, b: Any) -> Tensor:
    a, b = _operands(a, b)
    out = a.data / b.data

    def vjp(g, needs):
        return (_unbroadcast(g / b.data, a.shape) if needs[0] else None,
                _unbroadcast(-g * out / b.data, b.shape) if needs[1] else None)

    return apply("div", (a, b), out, vjp)


def neg(x: Tensor) -> Tensor:
    return apply("neg", (x,), -x.data, lambda g, needs: (-g,))


def square(x: Tensor) -> Tensor:
    return apply("square", (x,), x.data * x.data, lambda g, needs: (2 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return apply("sqrt", (x,), out, lambda g, needs: (g / (2 * out),))


def absolute(x: Tensor) -> Tensor:
    return apply("abs", (x,), np.abs(x.data), lambda g, needs: (g * np.sign(x.data),))


def log2(x: Tensor) -> Tensor:
    return apply("log2", (x,), np.log2(x.data),
                 lambda g, needs: (g / (x.data * np.log(2.0)).astype(x.dtype),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(x.dtype.type(0), x.data)
    return apply("softplus", (x,), out, lambda g, needs: (g * special.expit(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return apply("sigmoid", (x,), out, lambda g, needs: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return apply("tanh", (x,), out, lambda g, needs: (g * (1 - out * out),))


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def normal_cdf(x: Tensor) -> Tensor:
    """Standard normal cumulative distribution Φ(x)."""
    out = special.ndtr(x.data).astype(x.dtype)

    def vjp(g, needs):
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)).astype(x.dtype)
        return (g * pdf,)

    return apply("normal_cdf", (x,), out, vjp)


def lower_bound(x: Tensor, bound: float) -> Tensor:
    """max(x, bound); zero gradient where the bound is active."""
    out = np.maximum(x.data, x.dtype.type(bound))
    return apply("lower_bound", (x,), out,
                 lambda g, needs: (g * (x.data >= bound),), bound=bound)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    out = np.clip(x.data, low, high)
    inside = (x.data >= low) & (x.data <= high)
    return apply("clip", (x,), out, lambda g, needs: (g * inside,), low=low, high=high)


# -- reductions and shape ----------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = np.sum(x.data, dtype=x.dtype).reshape((1,))
    return apply("sum", (x,), out,
                 lambda g, needs: (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    count = x.data.size
    out = (np.sum(x.data, dtype=x.dtype) / x.dtype.type(count)).reshape((1,))
    return apply("mean", (x,), out,
                 lambda g, needs: (np.full(x.shape, g.reshape(()) / count, dtype=x.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return apply("reshape", (x,), out, lambda g, needs: (g.reshape(x.shape),), shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(a) for a in np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return apply("transpose", (x,), out, lambda g, needs: (np.transpose(g, inverse),), axes=axes)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the leading axis: [N,o,i] @ [N,i,m] -> [N,o,m]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g, needs):
        ga = np.matmul(g, np.swapaxes(b.data, 1, 2)) if needs[0] else None
        gb = np.matmul(np.swapaxes(a.data, 1, 2), g) if needs[1] else None
        return (ga, gb)

    return apply("matmul", (a, b), out, vjp)


def leading_slice(x: Tensor, extents: Sequence[int]) -> Tensor:
    """Leading sub-block ``x[0:e0, 0:e1, ...]`` (trailing axes kept whole)."""
    index = tuple(slice(0, e) for e in extents)
    for axis, extent in enumerate(extents):
        if extent < 1 or extent > x.shape[axis]:
            raise ShapeError(f"slice extent {extent} out of range for axis {axis} of {x.shape}")
    out = np.ascontiguousarray(x.data[index])

    def vjp(g, needs):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return apply("leading_slice", (x,), out, vjp, extents=tuple(extents))


def channel_split(x: Tensor, at: int) -> tuple[Tensor, Tensor]:
    """Split a [B,C,H,W] tensor into channels [0,at) and [at,C)."""
    if not 0 < at < x.shape[1]:
        raise ShapeError(f"cannot split {x.shape[1]} channels at {at}")
    head, tail = x.data[:, :at], x.data[:, at:]

    def head_vjp(g, needs):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :at] = g
        return (full,)

    def tail_vjp(g, needs):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, at:] = g
        return (full,)

    return (apply("channel_head", (x,), np.ascontiguousarray(head), head_vjp, at=at),
            apply("channel_tail", (x,), np.ascontiguousarray(tail), tail_vjp, at=at))


__all__ = [
    "Parameter",
    "Node",
    "Tensor",
    "Gradients",
    "ComputeGraph",
    "backward",
    "apply",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "sqrt",
    "absolute",
    "log2",
    "softplus",
    "sigmoid",
    "tanh",
    "normal_cdf",
    "lower_bound",
    "clip",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "matmul",
    "leading_slice",
    "channel_split",
]
