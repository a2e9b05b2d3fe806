"""Differentiable layer kernels with hand-written forward/backward passes.

All kernels operate on N x C x H x W float64 batches and return a cache for
the backward pass. Convolutions are "valid"; padding is an explicit layer.
The kernel-offset loops map each term to one BLAS call, which keeps the
whole stack fast enough to train on a CPU.
"""

import numpy as np

from .errors import DimensionError


def conv_forward(x, weight, bias, stride=1, dilation=1):
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise DimensionError(f"conv expects {cin} input channels, got {c}")
    keff_h = 1 + (kh - 1) * dilation
    keff_w = 1 + (kw - 1) * dilation
    hout = (h - keff_h) // stride + 1
    wout = (w - keff_w) // stride + 1
    if hout < 1 or wout < 1:
        raise DimensionError(
            f"conv kernel {kh}x{kw} (dilation {dilation}) exceeds input {h}x{w}"
        )
    cols = _im2col(x, kh, kw, stride, dilation, hout, wout)
    out = weight.reshape(cout, -1) @ cols
    out = out.reshape(cout, n, hout, wout).transpose(1, 0, 2, 3)
    out += bias.reshape(1, -1, 1, 1)
    return out, (x.shape, cols, weight, stride, dilation, hout, wout)


def conv_backward(dout, cache, need_dx=True):
    x_shape, cols, weight, stride, dilation, hout, wout = cache
    cout, cin, kh, kw = weight.shape
    dout2 = dout.transpose(1, 0, 2, 3).reshape(cout, -1)
    db = dout2.sum(axis=1)
    dw = (dout2 @ cols.T).reshape(weight.shape)
    if not need_dx:
        return None, dw, db
    dcols = weight.reshape(cout, -1).T @ dout2
    dx = _col2im(dcols, x_shape, kh, kw, stride, dilation, hout, wout)
    return dx, dw, db


def _im2col(x, kh, kw, stride, dilation, hout, wout):
    """Gather conv windows into a (cin*kh*kw, n*hout*wout) matrix."""
    n, c = x.shape[:2]
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, kh, kw, n, hout, wout),
        strides=(sc, sh * dilation, sw * dilation, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(c * kh * kw, n * hout * wout)


def _col2im(dcols, x_shape, kh, kw, stride, dilation, hout, wout):
    """Adjoint of ``_im2col``: scatter-add window gradients back."""
    n, c = x_shape[:2]
    dx = np.zeros(x_shape)
    d = dcols.reshape(c, kh, kw, n, hout, wout)
    for i in range(kh):
        hi = slice(i * dilation, i * dilation + (hout - 1) * stride + 1, stride)
        for j in range(kw):
            wj = slice(j * dilation, j * dilation + (wout - 1) * stride + 1, stride)
            dx[:, :, hi, wj] += d[:, i, j].transpose(1, 0, 2, 3)
    return dx


def reflect_pad_forward(x, pad_h, pad_w):
    if pad_h >= x.shape[2] or pad_w >= x.shape[3]:
        raise DimensionError("reflection padding exceeds spatial extent")
    out = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)), mode="reflect")
    return out, (x.shape, pad_h, pad_w)


def reflect_pad_backward(dout, cache):
    shape, pad_h, pad_w = cache
    dx = _fold_axis(dout, pad_h, shape[2], axis=2)
    dx = _fold_axis(dx, pad_w, shape[3], axis=3)
    return dx


def _fold_axis(d, pad, size, axis):
    """Adjoint of reflection padding along one axis.

    Left pad rows came from source rows pad..1, right pad rows from
    size-2..size-1-pad, so the adjoint adds the flipped borders back.
    """
    if pad == 0:
        return d
    d = np.moveaxis(d, axis, 0)
    core = d[pad : pad + size].copy()
    core[1 : pad + 1] += d[:pad][::-1]
    core[size - 1 - pad : size - 1] += d[pad + size :][::-1]
    return np.moveaxis(core, 0, axis)


def zero_pad_forward(x, pad_h, pad_w):
    out = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    return out, (pad_h, pad_w)


def zero_pad_backward(dout, cache):
    pad_h, pad_w = cache
    h_end = dout.shape[2] - pad_h
    w_end = dout.shape[3] - pad_w
    return dout[:, :, pad_h:h_end, pad_w:w_end]


def elu_forward(x):
    out = np.where(x > 0, x, np.exp(np.minimum(x, 0.0)) - 1.0)
    return out, (x > 0, out)


def elu_backward(dout, cache):
    positive, out = cache
    return np.where(positive, dout, dout * (out + 1.0))


def shuffle_forward(x, ratio):
    n, c, h, w = x.shape
    if c % (ratio * ratio) != 0:
        raise DimensionError(f"shuffle ratio {ratio} does not divide {c} channels")
    co = c // (ratio * ratio)
    out = (
        x.reshape(n, co, ratio, ratio, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, co, h * ratio, w * ratio)
    )
    return out, (x.shape, ratio)


def shuffle_backward(dout, cache):
    (n, c, h, w), ratio = cache
    co = c // (ratio * ratio)
    return (
        dout.reshape(n, co, h, ratio, w, ratio)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c, h, w)
    )


def pixel_unshuffle(x, ratio):
    """Inverse channel-to-space rearrangement (value-level, no cache)."""
    n, c, h, w = x.shape
    if h % ratio or w % ratio:
        raise DimensionError(f"unshuffle ratio {ratio} does not divide {h}x{w}")
    return (
        x.reshape(n, c, h // ratio, ratio, w // ratio, ratio)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * ratio * ratio, h // ratio, w // ratio)
    )


def dropout_forward(x, rate, rng):
    if not 0.0 <= rate < 1.0:
        raise DimensionError("dropout rate must lie in [0, 1)")
    if rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(dout, cache):
    if cache is None:
        return dout
    keep, scale = cache
    return dout * keep * scale
