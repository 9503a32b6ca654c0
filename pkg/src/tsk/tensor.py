"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on :class:`Tensor` records its inputs and a closure that maps
the output gradient to input gradients.  :func:`backward` walks the recorded
graph in reverse topological order (the tape) and accumulates gradients into
the ``.grad`` field of every leaf tensor created with ``requires_grad=True``.

The graph is rebuilt on every forward pass and released by ``backward``; a
second ``backward`` through the same graph raises ``RuntimeError``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "backward",
    "tensor",
    "matmul",
    "linear",
    "conv1d_temporal",
    "sliding_windows",
    "pool_time",
    "segment_max",
    "activation",
    "concat",
    "stack",
    "softmax",
    "logsumexp",
    "softplus",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = _op
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple, op: str, fn) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        out = cls(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
        if needs:
            out._backward = fn
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data + other.data, (self, other), "add",
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data - other.data, (self, other), "sub",
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
        )

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(
            x * y, (self, other), "mul",
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data
        out = x / y
        return Tensor._make(
            out, (self, other), "div",
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        x = self.data
        return Tensor._make(
            x ** exponent, (self,), "pow",
            lambda g: (g * exponent * x ** (exponent - 1),),
        )

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- unary functions ------------------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._make(np.log(x), (self,), "log", lambda g: (g / x,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return Tensor._make(out, (self,), "sigmoid", lambda g: (g * out * (1.0 - out),))

    def abs(self) -> "Tensor":
        x = self.data
        return Tensor._make(np.abs(x), (self,), "abs", lambda g: (g * np.sign(x),))

    def square(self) -> "Tensor":
        x = self.data
        return Tensor._make(x * x, (self,), "square", lambda g: (2.0 * g * x,))

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", fn)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int) -> "Tensor":
        """Maximum along ``axis``; the gradient goes to the first maximal entry."""
        x = self.data
        idx = np.argmax(x, axis=axis)
        out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def fn(g):
            grad = np.zeros_like(x)
            np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            return (grad,)

        return Tensor._make(out, (self,), "max", fn)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), "reshape", lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), "transpose", lambda g: (g.transpose(inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        x = self.data
        keys = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in keys)

        def fn(g):
            grad = np.zeros_like(x)
            if basic:
                grad[key] = g
            else:
                np.add.at(grad, key, g)
            return (grad,)

        return Tensor._make(x[key], (self,), "getitem", fn)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# -- backward -----------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Gradients are *added* to ``.grad`` of every reachable leaf that requires
    grad, so several losses may be accumulated before an optimizer step; call
    ``zero_grad`` between steps.  Returns a map from each such leaf to the
    gradient contributed by this call.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("graph already released by a previous backward(); re-run the forward pass")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor with requires_grad=True")

    tape = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._consumed:
            raise RuntimeError("graph reuses an intermediate released by an earlier backward()")
        if node.is_leaf:
            contributed[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in tape:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._consumed = True
    return contributed


# -- named operations ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape[0]}x{a.shape[1]} times {b.shape[0]}x{b.shape[1]}"
        )
    x, y = a.data, b.data
    return Tensor._make(x @ y, (a, b), "matmul", lambda g: (g @ y.T, x.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``."""
    x = _as_tensor(x)
    k, c = weight.shape
    if x.shape[-1] != k:
        raise ShapeError(f"linear: input has trailing dimension {x.shape[-1]}, weight expects {k}")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match {c} outputs")
    lead = x.shape[:-1]
    out = matmul(x.reshape(-1, k), weight)
    if bias is not None:
        out = out + bias
    return out.reshape(*lead, c)


def sliding_windows(v: Tensor, length: int, padding: str = "valid") -> Tensor:
    """Stack every length-``length`` window of ``v`` (T x D) into (T' x L x D).

    ``valid`` gives T' = T - L + 1.  ``same`` (edge replication) gives T' = T
    with window ``t`` centred on frame ``t``: (L-1)//2 frames before it.
    """
    v = _as_tensor(v)
    if v.ndim != 2:
        raise ShapeError(f"sliding_windows expects a T x D tensor, got shape {v.shape}")
    T = v.shape[0]
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if padding == "valid":
        if length > T:
            raise ShapeError(f"window length L={length} exceeds sequence length T={T} in valid mode")
        src = np.arange(T - length + 1)[:, None] + np.arange(length)[None, :]
    elif padding in ("same", "same-replicate"):
        before = (length - 1) // 2
        src = np.arange(T)[:, None] + np.arange(length)[None, :] - before
        np.clip(src, 0, T - 1, out=src)
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    x = v.data

    def fn(g):
        grad = np.zeros_like(x)
        np.add.at(grad, src.ravel(), g.reshape(-1, x.shape[1]))
        return (grad,)

    return Tensor._make(x[src], (v,), "windows", fn)


def conv1d_temporal(v: Tensor, kernel: Tensor, padding: str = "valid") -> Tensor:
    """Temporal convolution (cross-correlation) of a T x D sequence.

    ``kernel`` is L x D x D'; ``out[t] = sum_k v[t + k - offset] @ kernel[k]``.
    """
    v, kernel = _as_tensor(v), _as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be L x D x D', got shape {kernel.shape}")
    L, D, Dout = kernel.shape
    if v.ndim != 2 or v.shape[1] != D:
        raise ShapeError(f"conv1d_temporal: features {v.shape} do not match kernel input dim {D}")
    win = sliding_windows(v, L, padding)
    return matmul(win.reshape(win.shape[0], L * D), kernel.reshape(L * D, Dout))


def pool_time(v: Tensor, kind: str = "max") -> Tensor:
    """Max- or mean-pool a T x D sequence over time, giving a length-D vector."""
    v = _as_tensor(v)
    if v.shape[0] == 0:
        raise ShapeError("cannot pool an empty sequence")
    if kind == "max":
        return v.max(axis=0)
    if kind == "mean":
        return v.mean(axis=0)
    raise ValueError(f"unknown pooling kind {kind!r}")


def segment_max(v: Tensor, bounds: Sequence[tuple[int, int]]) -> Tensor:
    """Max over each half-open interval of the second-to-last axis.

    For ``v`` of shape (..., T, D) returns (..., K, D) for K intervals.
    """
    v = _as_tensor(v)
    x = v.data
    ax = x.ndim - 2
    pieces, argidx = [], []
    for start, end in bounds:
        if not 0 <= start < end <= x.shape[ax]:
            raise ShapeError(f"interval [{start}, {end}) outside axis of length {x.shape[ax]}")
        seg = np.take(x, np.arange(start, end), axis=ax)
        i = np.argmax(seg, axis=ax)
        argidx.append(i + start)
        pieces.append(np.take_along_axis(seg, np.expand_dims(i, ax), axis=ax))
    out = np.concatenate(pieces, axis=ax)
    idx = np.stack(argidx, axis=ax)

    def fn(g):
        grad = np.zeros_like(x)
        # intervals may overlap, so scatter one interval at a time
        for k in range(idx.shape[ax]):
            ik = np.expand_dims(np.take(idx, k, axis=ax), ax)
            gk = np.expand_dims(np.take(g, k, axis=ax), ax)
            cur = np.take_along_axis(grad, ik, axis=ax)
            np.put_along_axis(grad, ik, cur + gk, axis=ax)
        return (grad,)

    return Tensor._make(out, (v,), "segment_max", fn)


def activation(x: Tensor, kind: str) -> Tensor:
    x = _as_tensor(x)
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    if kind == "exp":
        return x.exp()
    raise ValueError(f"unknown activation {kind!r}")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = _as_tensor(x)
    d = x.data
    return Tensor._make(np.logaddexp(0.0, d), (x,), "softplus", lambda g: (g * _sigmoid(d),))


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    s = np.log(np.exp(d - m).sum(axis=axis, keepdims=True)) + m
    out = np.squeeze(s, axis=axis)

    def fn(g):
        return (np.expand_dims(g, axis) * np.exp(d - s),)

    return Tensor._make(out, (x,), "logsumexp", fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), "softmax", fn)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(out, tuple(tensors), "concat", lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return Tensor._make(
        out, tuple(tensors), "stack",
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )
