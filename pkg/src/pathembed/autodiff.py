"""Reverse-mode automatic differentiation on numpy arrays.

Small on purpose: only the operations the training objectives need are
implemented (elementwise arithmetic, exp/log/relu/clamp, 2-D matmul,
reductions, row gather, segment sum, concatenation, and a zero-safe row
norm). All data is float64. Graphs are built eagerly and differentiated
by an iterative topological sweep, so deep chains do not hit the
interpreter recursion limit.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` over the axes numpy broadcasting introduced."""
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
    """A float64 array plus the plumbing to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[Array], tuple[Array | None, ...]] | None = None,
    ):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise ValueError("backward() is only defined for scalar outputs")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(node.grad)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _wrap(other)
        out_data = self.data + other.data

        def vjp(g: Array):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, _parents=(self,), _vjp=lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _wrap(other)
        out_data = self.data - other.data

        def vjp(g: Array):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    def __rsub__(self, other) -> "Tensor":
        return _wrap(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = _wrap(other)
        out_data = self.data * other.data
        a, b = self.data, other.data

        def vjp(g: Array):
            return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data
        out_data = a / b

        def vjp(g: Array):
            return (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape))

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    def __rtruediv__(self, other) -> "Tensor":
        return _wrap(other).__truediv__(self)

    def __pow__(self, p) -> "Tensor":
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        x = self.data
        out_data = x ** p

        def vjp(g: Array):
            return (g * p * x ** (p - 1),)

        return Tensor(out_data, _parents=(self,), _vjp=vjp)

    def __matmul__(self, other) -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        out_data = a @ b

        def vjp(g: Array):
            return (g @ b.T, a.T @ g)

        return Tensor(out_data, _parents=(self, other), _vjp=vjp)

    # -- nonlinearities ------------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g * out_data,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor(np.log(x), _parents=(self,), _vjp=lambda g: (g / x,))

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        return Tensor(self.data * mask, _parents=(self,), _vjp=lambda g: (g * mask,))

    def clamp(self, lo: float, hi: float) -> "Tensor":
        # gradient passes only where the input is strictly inside the box
        mask = (self.data >= lo) & (self.data <= hi)
        out_data = np.clip(self.data, lo, hi)
        return Tensor(out_data, _parents=(self,), _vjp=lambda g: (g * mask,))

    # -- reductions and reshaping --------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def vjp(g: Array):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor(out_data, _parents=(self,), _vjp=vjp)

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        old = self.data.shape
        return Tensor(
            self.data.reshape(*shape),
            _parents=(self,),
            _vjp=lambda g: (g.reshape(old),),
        )


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def gather_rows(x: Tensor, index: Array) -> Tensor:
    """out[i] = x[index[i]], differentiably (grad scatter-adds)."""
    index = np.asarray(index, dtype=np.intp)
    x_shape = x.data.shape
    out_data = x.data[index]

    def vjp(g: Array):
        gx = np.zeros(x_shape, dtype=np.float64)
        np.add.at(gx, index, g)
        return (gx,)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def segment_sum(x: Tensor, segments: Array, num_segments: int) -> Tensor:
    """out[s] = sum of x rows whose segment id is s. Empty segments are 0."""
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape[0] != x.data.shape[0]:
        raise ValueError("one segment id per leading row is required")
    out_shape = (num_segments,) + x.data.shape[1:]
    out_data = np.zeros(out_shape, dtype=np.float64)
    np.add.at(out_data, segments, x.data)
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g[segments],))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g: Array):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(out_data, _parents=tuple(tensors), _vjp=vjp)


def l2norm_rows(x: Tensor) -> Tensor:
    """Euclidean norm of each row; the gradient at a zero row is 0."""
    if x.data.ndim != 2:
        raise ValueError("l2norm_rows expects a 2-D tensor")
    norms = np.sqrt((x.data * x.data).sum(axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    data = x.data

    def vjp(g: Array):
        # rows with norm 0 have data 0, so their gradient is exactly 0
        return ((g / safe)[:, None] * data,)

    return Tensor(norms, _parents=(x,), _vjp=vjp)
