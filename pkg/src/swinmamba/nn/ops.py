"""Differentiable kernels over :class:`Tensor`.

No general broadcasting: elementwise ops demand equal shapes, and the few
places that need a per-channel vector (biases, norm affines) go through
dedicated kernels.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, make_result, shape_error


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise shape_error(op, a.shape, b.shape)


# -- elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    return make_result(a.data * s, (a,), lambda g: (g * s,), "scale")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return make_result(a.data + s, (a,), lambda g: (g,), "add_scalar")


def add_broadcast(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b`` has ``x``'s rank and size 1 on every broadcast axis."""
    if b.ndim != x.ndim or any(bs not in (1, xs) for bs, xs in zip(b.shape, x.shape)):
        raise shape_error("add_broadcast", x.shape, b.shape)
    axes = tuple(i for i, (bs, xs) in enumerate(zip(b.shape, x.shape)) if bs == 1 and xs != 1)
    return make_result(
        x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes, keepdims=True)), "add_broadcast"
    )


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    first = tensors[0]
    for t in tensors[1:]:
        _same_shape("add_n", first, t)
    out = first.data.copy()
    for t in tensors[1:]:
        out += t.data
    return make_result(out, tuple(tensors), lambda g: (g,) * len(tensors), "add_n")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    """``x * sigmoid(x)``."""
    s = _sigmoid(x.data)
    y = x.data * s
    return make_result(y, (x,), lambda g: (g * (s + y * (1.0 - s)),), "silu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN so a bad input cannot vanish behind a ReLU
    return make_result(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def softplus_np(v: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, v)


def softplus(x: Tensor) -> Tensor:
    y = softplus_np(x.data)
    s = _sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * s,), "softplus")


def total(x: Tensor) -> Tensor:
    return make_result(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_result(np.asarray(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / n),), "mean")


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise shape_error("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., i] @ weight[i, o] + bias[o]`` on the trailing axis."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise shape_error("linear", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[1],):
        raise shape_error("linear(bias)", bias.shape, (weight.shape[1],))
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, backward, "linear")


# -- layout --------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise shape_error("reshape", x.shape, shape)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; the result is a copy."""
    out = np.array(x.data[index])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return make_result(out, (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis % len(ref)):
            raise shape_error("concat", tensors[0].shape, t.shape)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return make_result(
        out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack"
    )


def pad(x: Tensor, widths: Sequence[tuple]) -> Tensor:
    """Zero padding with numpy ``pad_width`` semantics (one pair per axis)."""
    widths = tuple((int(a), int(b)) for a, b in widths)
    if len(widths) != x.ndim or any(a < 0 or b < 0 for a, b in widths):
        raise ShapeError(f"pad: widths {widths} invalid for shape {x.shape}")
    out = np.pad(x.data, widths)
    crop_idx = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(g[crop_idx]),), "pad")


def crop(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Keep the leading ``sizes[i]`` entries of each axis (inverse of bottom/right padding)."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != x.ndim or any(s > n or s < 1 for s, n in zip(sizes, x.shape)):
        raise shape_error("crop", x.shape, sizes)
    idx = tuple(slice(0, s) for s in sizes)
    widths = tuple((0, n - s) for s, n in zip(sizes, x.shape))
    return make_result(np.ascontiguousarray(x.data[idx]), (x,), lambda g: (np.pad(g, widths),), "crop")


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make_result(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, back, axes),), "roll")


def apply_linear_map(x: Tensor, forward, adjoint, op: str) -> Tensor:
    """Lift a pair of mutually adjoint numpy maps into a tape op."""
    return make_result(forward(x.data), (x,), lambda g: (adjoint(g),), op)


# -- normalization -------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize over ``axis`` (the channel axis), then apply a per-channel affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be > 0, got {eps}")
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise shape_error("layer_norm", x.shape, gamma.shape)
    bshape = [1] * x.ndim
    bshape[axis] = c
    gb, bb = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gb + bb
    red = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        dxhat = g * gb
        m1 = dxhat.mean(axis=axis, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
        gx = rstd * (dxhat - m1 - xhat * m2)
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


# -- convolutions (channel-first [B, C, H, W]) ---------------------------------

def _check_4d(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected [B, C, H, W], got {x.shape}")


def depthwise_conv3x3(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 3x3 cross-correlation, zero padding 1, stride 1."""
    _check_4d("depthwise_conv3x3", x)
    B, C, H, W = x.shape
    if kernel.shape != (C, 3, 3):
        raise shape_error("depthwise_conv3x3", x.shape, kernel.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    k = kernel.data
    out = np.zeros_like(x.data)
    for u in range(3):
        for v in range(3):
            out += xp[:, :, u:u + H, v:v + W] * k[None, :, u, v, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        for u in range(3):
            for v in range(3):
                gxp[:, :, u:u + H, v:v + W] += g * k[None, :, u, v, None, None]
                gk[:, u, v] = np.einsum("bchw,bchw->c", g, xp[:, :, u:u + H, v:v + W])
        gx = np.ascontiguousarray(gxp[:, :, 1:1 + H, 1:1 + W])
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, backward, "depthwise_conv3x3")


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense 3x3 convolution, zero padding 1; ``weight`` is [C_out, C_in, 3, 3]."""
    _check_4d("conv3x3", x)
    B, C, H, W = x.shape
    if weight.ndim != 4 or weight.shape[1:] != (C, 3, 3):
        raise shape_error("conv3x3", x.shape, weight.shape)
    co = weight.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # cols[b, h, w, c, u, v]
    cols = np.empty((B, H, W, C, 3, 3), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            cols[..., u, v] = xp[:, :, u:u + H, v:v + W].transpose(0, 2, 3, 1)
    cols2 = cols.reshape(B * H * W, C * 9)
    w2 = weight.data.reshape(co, C * 9)
    out = cols2 @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, H, W, co).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * H * W, co)
        gw = (g2.T @ cols2).reshape(weight.shape)
        gcols = (g2 @ w2).reshape(B, H, W, C, 3, 3)
        gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                gxp[:, :, u:u + H, v:v + W] += gcols[..., u, v].transpose(0, 3, 1, 2)
        gx = np.ascontiguousarray(gxp[:, :, 1:1 + H, 1:1 + W])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, backward, "conv3x3")


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise projection of [B, C_in, H, W] with ``weight`` [C_in, C_out]."""
    _check_4d("conv1x1", x)
    y = linear(transpose(x, (0, 2, 3, 1)), weight, bias)
    return transpose(y, (0, 3, 1, 2))


# -- resampling ----------------------------------------------------------------

def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D interpolation weights, half-pixel centres (``align_corners=False``).

    Output sample ``i`` reads the input at ``(i + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``.
    """
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def adaptive_pool_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Averaging weights for bins ``[floor(i*n/s), ceil((i+1)*n/s))``."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def separable_resample(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """``out[..., i, j] = sum_pq mh[i, p] x[..., p, q] mw[j, q]``."""
    if x.shape[-2] != mh.shape[1] or x.shape[-1] != mw.shape[1]:
        raise shape_error("separable_resample", x.shape, (mh.shape[1], mw.shape[1]))
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = mh @ x.data @ mw.T
    return make_result(out, (x,), lambda g: (mh.T @ g @ mw,), "resample")


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    if height < 1 or width < 1:
        raise ValueError(f"bilinear_resize: target size must be >= 1, got {height}x{width}")
    if (height, width) == x.shape[-2:]:
        return x
    return separable_resample(x, bilinear_matrix(height, x.shape[-2]), bilinear_matrix(width, x.shape[-1]))


def adaptive_avg_pool(x: Tensor, size: int) -> Tensor:
    return separable_resample(
        x, adaptive_pool_matrix(size, x.shape[-2]), adaptive_pool_matrix(size, x.shape[-1])
    )


# -- loss ------------------------------------------------------------------------

def log_softmax_np(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_np(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    return np.exp(log_softmax_np(logits, axis))


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored pixels.

    ``logits`` is [B, K, H, W] and ``labels`` integer [B, H, W].
    """
    _check_4d("cross_entropy", logits)
    B, K, H, W = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (B, H, W):
        raise shape_error("cross_entropy", logits.shape, labels.shape)
    valid = np.ones(labels.shape, dtype=bool) if ignore_index is None else labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= K))
    if bad.any():
        raise ValueError(f"cross_entropy: label {int(labels[bad][0])} outside 0..{K - 1}")
    count = int(valid.sum())
    if count == 0:
        raise ValueError("cross_entropy: every pixel is ignored")
    safe = np.where(valid, labels, 0)
    logp = log_softmax_np(logits.data, axis=1)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / count

    def backward(g):
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        grad = (grad - onehot) * valid[:, None] * (g / count)
        return (grad,)

    return make_result(np.asarray(loss), (logits,), backward, "cross_entropy")

