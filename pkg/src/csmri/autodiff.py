"""Minimal reverse-mode differentiation engine on numpy arrays.

Tensors wrap ndarrays and record the ops applied to them; ``backward`` walks
the graph once in reverse topological order and accumulates gradients into
every tensor created with ``requires_grad``. Complex tensors carry gradients
packed as dL/dRe(z) + 1j * dL/dIm(z), which makes the backward rule of any
unitary linear op its adjoint and keeps finite-difference checks on real and
imaginary parts straightforward.

Only what the reconstruction networks need is implemented: elementwise
arithmetic, stride-1 zero-padded conv2d, 2x max/avg pooling, nearest-neighbor
upsampling, channel concat/slicing, soft shrinkage, softplus, leaky ReLU, the
centered Fourier transforms, and full reductions.
"""

import contextlib

import numpy as np
from scipy.special import expit

from .transforms import fft2c as _fft2c_np, ifft2c as _ifft2c_np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An ndarray plus the backward closure that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from consuming `ndarray <op> Tensor` elementwise; with ufunc
    # dispatch declined, python falls back to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; constants are wrapped on the fly
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def parameter(x):
    return Tensor(np.array(x), requires_grad=True)


def _make(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _match_kind(g, data):
    """Cast a gradient to the target tensor's real/complex kind and dtype."""
    if not np.iscomplexobj(data) and np.iscomplexobj(g):
        g = g.real
    return np.asarray(g, dtype=data.dtype)


def _unbroadcast(g, shape):
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binop_grad(g, other_data, target):
    return _match_kind(_unbroadcast(g, target.data.shape), target.data)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _binop_grad(g, None, a), _binop_grad(g, None, b)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _binop_grad(g, None, a), _binop_grad(-g, None, b)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            _binop_grad(g * np.conj(b.data), None, a) if a.requires_grad else None,
            _binop_grad(g * np.conj(a.data), None, b) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        inv = 1.0 / b.data
        return (
            _binop_grad(g * np.conj(inv), None, a) if a.requires_grad else None,
            _binop_grad(-g * np.conj(a.data * inv * inv), None, b)
            if b.requires_grad
            else None,
        )

    return _make(a.data / b.data, (a, b), backward)


def pow_const(x, p):
    """x ** p for a python-scalar exponent; fractional p needs positive x."""
    x = as_tensor(x)
    out = x.data ** p

    def backward(g):
        return (_match_kind(g * p * x.data ** (p - 1), x.data),)

    return _make(out, (x,), backward)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def backward(g):
        return (
            _binop_grad(g * take_a, None, a),
            _binop_grad(g * ~take_a, None, b),
        )

    return _make(np.minimum(a.data, b.data), (a, b), backward)


def clamp_min(x, floor):
    """max(x, floor) for a scalar floor; gradient passes where x > floor."""
    x = as_tensor(x)
    mask = x.data > floor

    def backward(g):
        return (_match_kind(g * mask, x.data),)

    return _make(np.maximum(x.data, floor), (x,), backward)


def abs_real(x):
    x = as_tensor(x)
    s = np.sign(x.data)

    def backward(g):
        return (_match_kind(g * s, x.data),)

    return _make(np.abs(x.data), (x,), backward)


def leaky_relu(x, slope=0.01):
    x = as_tensor(x)
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)

    def backward(g):
        return (_match_kind(g * scale, x.data),)

    return _make(x.data * scale, (x,), backward)


def softplus(x):
    x = as_tensor(x)

    def backward(g):
        return (_match_kind(g * expit(x.data), x.data),)

    return _make(np.logaddexp(0.0, x.data).astype(x.data.dtype), (x,), backward)


def soft_shrink(x, lam):
    """Elementwise soft threshold of a real tensor by a (learnable) threshold.

    ``lam`` broadcasts against ``x``; its gradient is -sign(x) wherever the
    element survives the threshold, zero elsewhere (subgradient 0 at the kink).
    """
    x, lam = as_tensor(x), as_tensor(lam)
    sign = np.sign(x.data)
    kept = np.abs(x.data) > lam.data
    out = np.where(kept, x.data - sign * lam.data, 0.0).astype(x.data.dtype)

    def backward(g):
        return (
            _binop_grad(g * kept, None, x),
            _binop_grad(-g * sign * kept, None, lam),
        )

    return _make(out, (x, lam), backward)


# ---------------------------------------------------------------------------
# reductions and shaping


def tsum(x):
    x = as_tensor(x)

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)

    return _make(np.sum(x.data), (x,), backward)


def sum_axis(x, axis):
    x = as_tensor(x)

    def backward(g):
        return (
            np.broadcast_to(np.expand_dims(g, axis), x.data.shape).astype(x.data.dtype),
        )

    return _make(np.sum(x.data, axis=axis), (x,), backward)


def tmean(x):
    x = as_tensor(x)
    n = x.data.size

    def backward(g):
        return ((np.broadcast_to(g, x.data.shape) / n).astype(x.data.dtype),)

    return _make(np.mean(x.data), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _make(x.data.reshape(shape), (x,), backward)


def getitem(x, key):
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _make(x.data[key], (x,), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(
            _match_kind(piece, t.data)
            for piece, t in zip(np.split(g, splits, axis=axis), tensors)
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# ---------------------------------------------------------------------------
# complex / real bridging


def real(z):
    z = as_tensor(z)

    def backward(g):
        return (g.astype(z.data.dtype),)

    return _make(np.real(z.data).copy(), (z,), backward)


def imag(z):
    z = as_tensor(z)

    def backward(g):
        return ((1j * g).astype(z.data.dtype),)

    return _make(np.imag(z.data).copy(), (z,), backward)


def make_complex(re, im):
    re, im = as_tensor(re), as_tensor(im)

    def backward(g):
        return (
            _match_kind(g.real, re.data),
            _match_kind(g.imag, im.data),
        )

    return _make(re.data + 1j * im.data, (re, im), backward)


def magnitude(z):
    """|z| of a complex tensor, gradient z/|z| (zero at the origin)."""
    z = as_tensor(z)
    mag = np.abs(z.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(mag > 0, z.data / mag, 0)
        return ((g * unit).astype(z.data.dtype),)

    return _make(mag, (z,), backward)


def fft2c(z):
    z = as_tensor(z)

    def backward(g):
        return (_ifft2c_np(g).astype(z.data.dtype),)

    return _make(_fft2c_np(z.data), (z,), backward)


def ifft2c(z):
    z = as_tensor(z)

    def backward(g):
        return (_fft2c_np(g).astype(z.data.dtype),)

    return _make(_ifft2c_np(z.data), (z,), backward)


# ---------------------------------------------------------------------------
# spatial ops (N, C, H, W)


def _im2col(x, k):
    n, c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di:di + h, dj:dj + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(dcols, x_shape, k):
    n, c, h, w = x_shape
    pad = k // 2
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dc = dcols.reshape(n, c, k, k, h, w)
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di:di + h, dj:dj + w] += dc[:, :, di, dj]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def conv2d(x, weight, bias):
    """Stride-1 same-size convolution (cross-correlation) with zero padding.

    x: (N, C, H, W); weight: (F, C, k, k) with odd k; bias: (F,).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    n, c, h, w = x.data.shape
    f, c_w, k, k2 = weight.data.shape
    if c_w != c or k != k2 or k % 2 != 1:
        raise ValueError(f"bad conv shapes: input {x.data.shape}, weight {weight.data.shape}")
    cols = _im2col(x.data, k)
    wm = weight.data.reshape(f, c * k * k)
    out = np.matmul(wm, cols).reshape(n, f, h, w) + bias.data[:, None, None]

    def backward(g):
        gm = g.reshape(n, f, h * w)
        d_x = d_w = d_b = None
        if weight.requires_grad:
            d_w = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
            d_w = d_w.reshape(weight.data.shape).astype(weight.data.dtype)
        if bias.requires_grad:
            d_b = g.sum(axis=(0, 2, 3)).astype(bias.data.dtype)
        if x.requires_grad:
            d_cols = np.matmul(wm.T, gm)
            d_x = _col2im(d_cols, x.data.shape, k).astype(x.data.dtype)
        return (d_x, d_w, d_b)

    return _make(out, (x, weight, bias), backward)


def _check_even_hw(shape):
    if shape[-1] % 2 or shape[-2] % 2:
        raise ValueError(f"spatial size must be even, got {shape[-2:]}")


def maxpool2(x):
    """2x2 max pooling; the gradient routes to the argmax of each window."""
    x = as_tensor(x)
    _check_even_hw(x.data.shape)
    n, c, h, w = x.data.shape
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w).astype(x.data.dtype),)

    return _make(out, (x,), backward)


def avgpool2(x):
    x = as_tensor(x)
    _check_even_hw(x.data.shape)
    sh = x.data.shape
    blocks = x.data.reshape(sh[:-2] + (sh[-2] // 2, 2, sh[-1] // 2, 2))
    out = blocks.mean(axis=(-3, -1))

    def backward(g):
        gb = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) / 4.0
        return (gb.astype(x.data.dtype),)

    return _make(out, (x,), backward)


def upsample_nearest2(x):
    x = as_tensor(x)

    def backward(g):
        sh = x.data.shape
        gb = g.reshape(sh[:-2] + (sh[-2], 2, sh[-1], 2)).sum(axis=(-3, -1))
        return (gb.astype(x.data.dtype),)

    return _make(np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1), (x,), backward)


def box_mean(x, win):
    """Mean over every valid win x win window of the last two axes."""
    x = as_tensor(x)
    if win < 1 or win > x.data.shape[-1] or win > x.data.shape[-2]:
        raise ValueError(f"window {win} does not fit shape {x.data.shape}")
    view = np.lib.stride_tricks.sliding_window_view(x.data, (win, win), axis=(-2, -1))
    out = view.mean(axis=(-2, -1))

    def backward(g):
        dx = np.zeros_like(x.data)
        gw = g / (win * win)
        oh, ow = out.shape[-2], out.shape[-1]
        for di in range(win):
            for dj in range(win):
                dx[..., di:di + oh, dj:dj + ow] += gw
        return (dx.astype(x.data.dtype),)

    return _make(out.astype(x.data.dtype), (x,), backward)


# ---------------------------------------------------------------------------
# backward driver


def _toposort(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Accumulate dloss/dtensor into ``grad`` of every reachable tensor.

    ``loss`` must be scalar (size 1). Gradients add onto any existing
    ``grad`` contents, so call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents == () or node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
