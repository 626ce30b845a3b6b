"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Operations evaluate eagerly on numpy arrays.  While a :class:`Graph` is
active (``with Graph() as g: ...``), every operation whose inputs require
gradients is appended to the tape; ``g.backward(loss)`` replays the tape
in reverse order and accumulates ``dloss/dleaf`` into the ``grad`` slot of
each leaf tensor.  With no active graph the same functions run
forward-only, so frozen-weight inference records nothing and is safe to
run concurrently from several threads.

Tapes are rebuilt on every forward pass and never reused across steps.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "GraphError",
    "backward",
    "matmul",
    "linear",
    "softmax_rows",
    "layer_norm",
    "leaky_relu",
    "sigmoid",
    "add",
    "sub",
    "mul",
    "neg",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "concat",
    "broadcast_to",
    "narrow",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Tape recording or replay used outside its contract."""


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``data`` is always a C-contiguous-compatible ``np.float64`` array (a
    scalar is stored as a 0-d array).  ``grad`` is ``None`` until a
    backward pass deposits a gradient of the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_produced", "_graph")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._produced = False
        self._graph: "Graph | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


_tls = threading.local()


def _graph_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Ordered tape of executed operations.

    Each record holds the output tensor, the input tensors and a backward
    rule mapping the output gradient to one gradient per input.  Records
    are appended in execution order, which is a topological order of the
    computation, so a single reverse sweep visits every node exactly once.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _graph_stack().pop()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

        Repeated calls without clearing grads accumulate, matching the
        usual minibatch-accumulation semantics.
        """
        if not isinstance(loss, Tensor):
            raise GraphError("backward expects a Tensor loss")
        if loss.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._graph is not self:
            raise GraphError("loss was not produced while this graph was recording")

        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, rule in reversed(self._records):
            g_out = flowing.pop(id(out), None)
            if g_out is None:
                continue
            for tens, grad in zip(inputs, rule(g_out)):
                if grad is None or not tens.requires_grad:
                    continue
                key = id(tens)
                if key in flowing:
                    flowing[key] = flowing[key] + grad
                else:
                    flowing[key] = grad
                    holders[key] = tens
        for key, grad in flowing.items():
            leaf = holders[key]
            if leaf.requires_grad and not leaf._produced:
                leaf.grad = grad if leaf.grad is None else leaf.grad + grad


def backward(loss: Tensor) -> None:
    """Run the backward pass of the graph that produced ``loss``."""
    if not isinstance(loss, Tensor) or loss._graph is None:
        raise GraphError("loss is not the recorded output of a graph")
    loss._graph.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(out_data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    graph = active_graph()
    record = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=record)
    if record:
        out._produced = True
        out._graph = graph
        graph._records.append((out, inputs, rule))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def rule(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _apply(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def rule(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = -_unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _apply(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def rule(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _apply(out, (a, b), rule)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _apply(-a.data, (a,), lambda g: (-g,))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum()

    def rule(g):
        return (np.full(a.data.shape, float(g)),)

    return _apply(out, (a,), rule)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean()
    n = a.data.size

    def rule(g):
        return (np.full(a.data.shape, float(g) / n),)

    return _apply(out, (a,), rule)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.data.shape),)

    return _apply(out, (a,), rule)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (np.transpose(g, inverse),)

    return _apply(out, (a,), rule)


def concat(parts, axis: int) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _apply(out, parts, rule)


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, shape)

    def rule(g):
        return (_unbroadcast(g, a.data.shape),)

    return _apply(out, (a,), rule)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    a = _as_tensor(a)
    if start < 0 or length < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] exceeds axis {axis} of {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index].copy()

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _apply(out, (a,), rule)


# ---------------------------------------------------------------------------
# linear algebra and neural primitives


def matmul(a, b) -> Tensor:
    """Matrix product; stacked inputs with identical leading extents batch."""
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    if (
        A.ndim < 2
        or B.ndim < 2
        or A.ndim != B.ndim
        or A.shape[:-2] != B.shape[:-2]
        or A.shape[-1] != B.shape[-2]
    ):
        raise ShapeError(f"matmul: incompatible shapes {A.shape} and {B.shape}")
    out = A @ B

    def rule(g):
        ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(A, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _apply(out, (a, b), rule)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``w: (in, out)``, broadcast over leading extents of x."""
    x, w = _as_tensor(x), _as_tensor(w)
    X, W = x.data, w.data
    if W.ndim != 2 or X.ndim < 1 or X.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {X.shape} does not match weight {W.shape}")
    out = X @ W
    if b is None:
        def rule(g):
            gx = g @ W.T if x.requires_grad else None
            if w.requires_grad:
                gw = X.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1])
            else:
                gw = None
            return gx, gw

        return _apply(out, (x, w), rule)

    b = _as_tensor(b)
    if b.data.shape != (W.shape[1],):
        raise ShapeError(f"linear: bias {b.data.shape} does not match weight {W.shape}")
    out = out + b.data

    def rule(g):
        gx = g @ W.T if x.requires_grad else None
        if w.requires_grad:
            gw = X.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1])
        else:
            gw = None
        gb = g.reshape(-1, W.shape[1]).sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _apply(out, (x, w, b), rule)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _apply(out, (x,), rule)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / population variance 1, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} must be ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gain.data * xhat + bias.data

    def rule(g):
        if x.requires_grad:
            gy = g * gain.data
            gx = inv * (
                gy
                - gy.mean(axis=-1, keepdims=True)
                - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
            )
        else:
            gx = None
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gbias = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _apply(out, (x, gain, bias), rule)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    keep = x.data >= 0
    out = np.where(keep, x.data, slope * x.data)

    def rule(g):
        return (g * np.where(keep, 1.0, slope),)

    return _apply(out, (x,), rule)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # exp of a non-positive argument only, so large |x| cannot overflow
    t = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def rule(g):
        return (g * out * (1.0 - out),)

    return _apply(out, (x,), rule)
