"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced; calling
:meth:`Tensor.backward` walks the graph in reverse topological order and
accumulates gradients into every tensor created with ``requires_grad=True``.
Only the operations the recognition model needs are implemented.  Arrays keep
the dtype they were created with, so the same code runs in float32 for
training and float64 for gradient checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (for inference loops)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        # iterative topological sort; forward graphs over long sequences are
        # deeper than the default recursion limit
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def tensor_op(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Create a tensor from a custom operation.

    ``backward`` receives the output gradient and must call
    :meth:`Tensor.accumulate` on whichever parents require gradients.  This
    is the extension point for losses with handwritten gradients.
    """
    out = Tensor(data, requires_grad=_grad_enabled and any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and linear algebra ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))
    return tensor_op(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))
    return tensor_op(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))
    return tensor_op(np.matmul(a.data, b.data), (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    def backward(g):
        if x.requires_grad:
            x.accumulate(g * mask)
    return tensor_op(x.data * mask, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.shape))
    return tensor_op(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    def backward(g):
        if x.requires_grad:
            x.accumulate(g.transpose(inverse))
    return tensor_op(x.data.transpose(axes), (x,), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape).copy())
    return tensor_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def tensor_max(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max reduction; gradients flow to the first maximal element only."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        gq = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gq, axis=axis)
        x.accumulate(gx)
    return tensor_op(out if keepdims else np.squeeze(out, axis=axis), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    def backward(g):
        if x.requires_grad:
            x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return tensor_op(y, (x,), backward)


def normalize(x: Tensor, axes, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over ``axes`` (biased variance).

    Affine scale/shift, when wanted, composes on top with ``mul``/``add``.
    """
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    def backward(g):
        if not x.requires_grad:
            return
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        x.accumulate(inv * (g - gm - xhat * gxm))
    return tensor_op(xhat, (x,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    def backward(g):
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids, g)
            weight.accumulate(gw)
    return tensor_op(weight.data[ids], (weight,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale kept values by
    1/(1-p) so the expectation is unchanged.  Identity when not training."""
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    def backward(g):
        if x.requires_grad:
            x.accumulate(g * mask)
    return tensor_op(x.data * mask, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed cross-entropy over a batch of rows.

    ``logits`` has shape (n, vocab) and ``targets`` holds one class index per
    row; the result is the sum (not mean) of the per-row negative
    log-likelihoods.
    """
    targets = np.asarray(targets)
    n = logits.data.shape[0]
    if targets.shape != (n,):
        raise ValueError(f"expected {n} target indices, got shape {targets.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), targets].sum()
    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), targets] -= 1.0
            logits.accumulate(g * grad)
    return tensor_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# -- convolution ----------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: tuple[int, int] = (1, 1), padding: tuple[int, int] = (1, 1)) -> Tensor:
    """2D convolution over (batch, channels, height, width) input.

    Implemented by gathering sliding windows (im2col) and contracting with
    the kernel.  With kernel 3 and padding 1 the output spatial size is
    ``ceil(input / stride)`` along each axis.
    """
    n, c_in, h, wd = x.data.shape
    c_out, c_in2, kh, kw = w.data.shape
    if c_in != c_in2:
        raise ValueError(f"input has {c_in} channels, kernel expects {c_in2}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]  # (n, c_in, oh, ow, kh, kw)
    oh, ow = windows.shape[2], windows.shape[3]
    # (n, oh, ow, c_in*kh*kw) @ (c_in*kh*kw, c_out)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c_in * kh * kw)
    wflat = w.data.reshape(c_out, c_in * kh * kw).T
    y = cols @ wflat
    if b is not None:
        y = y + b.data
    y = y.transpose(0, 3, 1, 2)

    def backward(g):
        gy = g.transpose(0, 2, 3, 1)  # (n, oh, ow, c_out)
        if b is not None and b.requires_grad:
            b.accumulate(gy.sum(axis=(0, 1, 2)))
        if w.requires_grad:
            gw = np.tensordot(gy, cols, axes=((0, 1, 2), (0, 1, 2)))  # (c_out, ckk)
            w.accumulate(gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = gy @ wflat.T  # (n, oh, ow, c_in*kh*kw)
            gcols = gcols.reshape(n, oh, ow, c_in, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, :, :, i, j]
            x.accumulate(gxp[:, :, ph:ph + h, pw:pw + wd])

    parents = (x, w) if b is None else (x, w, b)
    return tensor_op(y, parents, backward)


# -- optimizer --------------------------------------------------------------------


class Adam:
    """Adam with the standard bias-corrected moment estimates."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[k] = b1 * self._m[k] + (1 - b1) * p.grad
            v = self._v[k] = b2 * self._v[k] + (1 - b2) * p.grad * p.grad
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
