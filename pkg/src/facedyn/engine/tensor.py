"""Differentiable tensors: numpy arrays plus a recorded backward graph.

Only float32/float64 are supported. Arithmetic here covers the generic
graph plumbing (broadcast add/mul, matmul, reshape, reductions, slicing);
layer-level operations live in :mod:`facedyn.engine.functional`.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value, like=None):
    if isinstance(value, Tensor):
        return value.data
    arr = np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        dtype = like.dtype if like is not None else np.float32
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional differentiable array.

    `data` is a float32/float64 numpy array; `grad`, once backward has
    run, is a same-shape array holding d(loss)/d(self) for every tensor
    with `requires_grad` that the loss depends on.
    """

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._backward_ran = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Populate grads of every reachable requires_grad tensor.

        The loss must be a scalar; running backward twice on the same
        tensor is an error (rebuild the graph for the next step).
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward on a detached graph: nothing requires grad")
        if self._backward_ran:
            raise RuntimeError("backward already ran on this tensor; build a fresh graph")
        self._backward_ran = True

        # iterative post-order: children complete before their consumers run
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(_as_array(other, self))
        out = _from_op(self.data + o.data, (self, o))
        if out.requires_grad:
            def backward(g):
                self._accum(_unbroadcast(g, self.data.shape))
                o._accum(_unbroadcast(g, o.data.shape))
            out._backward = backward
        return out

    def __mul__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(_as_array(other, self))
        out = _from_op(self.data * o.data, (self, o))
        if out.requires_grad:
            def backward(g):
                self._accum(_unbroadcast(g * o.data, self.data.shape))
                o._accum(_unbroadcast(g * self.data, o.data.shape))
            out._backward = backward
        return out

    def __neg__(self):
        out = _from_op(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(_as_array(other, self))
        out = _from_op(self.data - o.data, (self, o))
        if out.requires_grad:
            def backward(g):
                self._accum(_unbroadcast(g, self.data.shape))
                o._accum(_unbroadcast(-g, o.data.shape))
            out._backward = backward
        return out

    def __rsub__(self, other):
        return Tensor(_as_array(other, self)) - self

    __radd__ = __add__
    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor) or isinstance(scalar, np.ndarray):
            raise TypeError("tensor division only supports python scalars")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        """Batched matrix product; leading dimensions must match exactly."""
        if not isinstance(other, Tensor):
            other = Tensor(_as_array(other, self))
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul requires tensors of rank >= 2")
        if a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"matmul leading dims differ: {a.shape[:-2]} vs {b.shape[:-2]}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul inner dims differ: {a.shape[-1]} vs {b.shape[-2]}")
        out = _from_op(a.data @ b.data, (a, b))
        if out.requires_grad:
            def backward(g):
                a._accum(g @ b.data.swapaxes(-1, -2))
                b._accum(a.data.swapaxes(-1, -2) @ g)
            out._backward = backward
        return out

    # -- reductions and shape ops ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def backward(g):
                gg = g
                if axis is not None and not keepdims:
                    gg = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape))
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        out = _from_op(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            n = self.data.size // out.data.size
            def backward(g):
                gg = g
                if axis is not None and not keepdims:
                    gg = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape) / n)
            out._backward = backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _from_op(self.data.reshape(shape), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        out = _from_op(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.transpose(inverse))
        return out

    def __getitem__(self, idx):
        out = _from_op(self.data[idx], (self,))
        if out.requires_grad:
            def backward(g):
                full = np.zeros_like(self.data)
                full[idx] += g
                self._accum(full)
            out._backward = backward
        return out


def _from_op(data, parents):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def concat(tensors, axis=0):
    """Concatenate along `axis`; backward splits the gradient back."""
    tensors = list(tensors)
    out = _from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
        out._backward = backward
    return out
