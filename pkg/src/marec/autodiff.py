"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor records the op that produced it and closures computing the adjoint
w.r.t. each parent; backward() walks the recorded graph once in reverse
topological order. The operator set is exactly what the reconstruction
networks need: conv2d (dispatched to the kernel backend), stride-2 transposed
conv, batch norm, leaky ReLU, sigmoid, dense, pooling, concat and the L1 loss.
"""

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError


class Tensor:
    """Dense float64 array plus the autodiff tape entry that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph traversal ---------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every requires_grad leaf."""
        if self.data.size != 1:
            raise ConfigurationError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            if node.grad is None:
                continue
            node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return mul(self, power(_as_tensor(other), -1.0))

    def __neg__(self):
        return neg(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def item(self):
        return float(self.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order = []
    seen = set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(tensor, grad):
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward, op=op)


# -- elementwise and reduction ops -----------------------------------------


def add(a, b):
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd, "add")


def neg(a):
    def bwd(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def mul(a, b):
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd, "mul")


def power(a, exponent):
    """a ** exponent for a float exponent."""
    out_data = a.data**exponent

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), bwd, "power")


def tabs(a):
    out_data = np.abs(a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * np.sign(a.data))

    return _make(out_data, (a,), bwd, "abs")


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def reshape(a, shape):
    orig = a.data.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(orig))

    return _make(out_data, (a,), bwd, "reshape")


def concat(tensors, axis=1):
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, gp in zip(tensors, parts):
            if t.requires_grad:
                _accumulate(t, gp)

    return _make(out_data, tuple(tensors), bwd, "concat")


# -- activations -----------------------------------------------------------


def leaky_relu(a, slope=0.01):
    mask = np.where(a.data >= 0, 1.0, slope)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), bwd, "leaky_relu")


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


# -- structured layers -----------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (B,Cin,H,W) with (Cout,Cin,k,k) weights."""
    B, Cin, H, W = x.data.shape
    Cout, Cw, k, k2 = weight.data.shape
    if Cw != Cin:
        raise ConfigurationError(f"conv2d channel mismatch: input {Cin} vs weight {Cw}")
    if k != k2:
        raise ConfigurationError("conv2d kernels must be square")
    if (H + 2 * padding - k) % stride or (W + 2 * padding - k) % stride:
        raise ConfigurationError("conv2d output extent is not an integer")
    out_data = kernels.conv2d_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _accumulate(x, kernels.conv2d_backward_input(g, weight.data, x.data.shape, stride, padding))
        if weight.requires_grad:
            _accumulate(weight, kernels.conv2d_backward_weight(g, x.data, weight.data.shape, stride, padding))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, bwd, "conv2d")


def conv2d_transpose(x, weight, bias=None, stride=2):
    """Stride-2 kernel-2 transposed conv; weight shape (Cin,Cout,2,2).

    Exact adjoint of conv2d(., weight, stride=2, padding=0) with the same
    array read as a (Cout,Cin,2,2) conv weight; spatial extent doubles.
    """
    if stride != 2 or weight.data.shape[2] != 2 or weight.data.shape[3] != 2:
        raise ConfigurationError("conv2d_transpose supports stride 2 with 2x2 kernels")
    B, Cin, H, W = x.data.shape
    Cw, Cout = weight.data.shape[0], weight.data.shape[1]
    if Cw != Cin:
        raise ConfigurationError(f"conv2d_transpose channel mismatch: input {Cin} vs weight {Cw}")
    out_data = np.einsum("bchw,cdij->bdhiwj", x.data, weight.data, optimize=True).reshape(
        B, Cout, 2 * H, 2 * W
    )
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        g6 = g.reshape(B, Cout, H, 2, W, 2)
        if x.requires_grad:
            _accumulate(x, np.einsum("bdhiwj,cdij->bchw", g6, weight.data, optimize=True))
        if weight.requires_grad:
            _accumulate(weight, np.einsum("bdhiwj,bchw->cdij", g6, x.data, optimize=True))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, bwd, "conv2d_transpose")


def dense(x, weight, bias=None):
    """x: (B,Cin), weight: (Cout,Cin) -> (B,Cout)."""
    if x.data.shape[1] != weight.data.shape[1]:
        raise ConfigurationError("dense input/weight feature mismatch")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.T @ x.data)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _make(out_data, parents, bwd, "dense")


def global_avg_pool(x):
    """(B,C,H,W) -> (B,C) spatial mean."""
    B, C, H, W = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g[:, :, None, None] / (H * W), x.data.shape))

    return _make(out_data, (x,), bwd, "global_avg_pool")


def max_pool2(x):
    """2x2 max pooling with stride 2; spatial extents must be even."""
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ConfigurationError(f"max_pool2 needs even extents, got {H}x{W}")
    windows = x.data.reshape(B, C, H // 2, 2, W // 2, 2).swapaxes(3, 4)
    flat = windows.reshape(B, C, H // 2, W // 2, 4)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not x.requires_grad:
            return
        gflat = np.zeros((B, C, H // 2, W // 2, 4))
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        _accumulate(x, gflat.reshape(B, C, H // 2, 2, W // 2, 2).swapaxes(3, 4).reshape(B, C, H, W))

    return _make(out_data, (x,), bwd, "max_pool2")


def batchnorm(x, gamma, beta, running_mean, running_var, mode, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization on (B,C,H,W).

    Train mode normalizes with batch statistics and updates the running
    buffers in place (plain arrays, no gradient); eval mode normalizes with
    the buffers. Biased variance throughout.
    """
    if mode == "train":
        B, C, H, W = x.data.shape
        if B * H * W < 2:
            raise ConfigurationError("batchnorm train mode needs >= 2 values per channel")
        mu = tmean(x, axis=(0, 2, 3), keepdims=True)
        var = tmean(mul(add(x, neg(mu)), add(x, neg(mu))), axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(-1)
        inv = power(add(var, Tensor(eps)), -0.5)
        xhat = mul(add(x, neg(mu)), inv)
    elif mode == "eval":
        mu = running_mean[None, :, None, None]
        inv = 1.0 / np.sqrt(running_var[None, :, None, None] + eps)
        xhat = mul(add(x, Tensor(-mu)), Tensor(inv))
    else:
        raise ConfigurationError(f"unknown batchnorm mode: {mode!r}")
    g4 = reshape(gamma, (1, -1, 1, 1))
    b4 = reshape(beta, (1, -1, 1, 1))
    return add(mul(xhat, g4), b4)


def l1_loss(pred, target):
    """Mean absolute difference over all elements (scalar Tensor)."""
    if pred.data.shape != target.data.shape:
        raise ConfigurationError(
            f"l1_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    return tmean(tabs(add(pred, neg(target))))


def check_finite(t, what="tensor"):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")
    return t
