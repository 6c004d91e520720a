"""Convolution, pooling and channel normalization primitives.

conv2d uses an im2col + GEMM forward and keeps the column matrix alive
for the backward pass; with the pooled spatial sizes used by the shipped
encoders that cache stays well under activation-memory scale and saves a
full patch-extraction pass per step.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeMismatchError, Tensor, _make, mean


class KernelTooLargeError(ValueError):
    """Kernel does not fit inside the padded input."""


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(B,C,Hp,Wp) -> (B*Ho*Wo, C*kh*kw) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b * ho * wo, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (B,C,H,W) input with (F,C,kh,kw) kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects 4-D input and kernel, got {x.data.shape} and {w.data.shape}"
        )
    bs, c, h, wd = x.data.shape
    f, ck, kh, kw = w.data.shape
    if c != ck:
        raise ShapeMismatchError(
            f"conv2d: input channels {c} != kernel channels {ck}"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise KernelTooLargeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(f, c * kh * kw)
    out = np.ascontiguousarray(
        (cols @ wmat.T).reshape(bs, ho, wo, f).transpose(0, 3, 1, 2)
    )
    if b is not None:
        out += b.data.reshape(1, f, 1, 1)

    shared = {}  # grad_x and grad_w both need the reordered upstream gradient

    def _g2(g):
        if "g2" not in shared:
            shared["g2"] = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
                bs * ho * wo, f
            )
        return shared["g2"]

    def grad_x(g):
        dcols = (_g2(g) @ wmat).reshape(bs, ho, wo, c, kh, kw)
        # accumulate in NHWC so the kernel-offset slices stay cheap to add
        gxp = np.zeros((bs, hp, wp, c), dtype=np.float32)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[
                    :, :, :, :, i, j
                ]
        gx = np.ascontiguousarray(gxp.transpose(0, 3, 1, 2))
        if padding:
            return gx[:, :, padding : padding + h, padding : padding + wd]
        return gx

    def grad_w(g):
        return (_g2(g).T @ cols).reshape(f, c, kh, kw)

    parents = [x, w]
    vjps = [grad_x, grad_w]
    if b is not None:
        parents.append(b)
        vjps.append(lambda g: g.sum(axis=(0, 2, 3)))
    return _make(out, parents, vjps)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = None) -> Tensor:
    """Max pooling over non-overlapping (or strided) kernel windows."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"maxpool2d expects 4-D input, got {x.data.shape}")
    stride = kernel if stride is None else stride
    bs, c, h, w = x.data.shape
    if kernel > h or kernel > w:
        raise KernelTooLargeError(
            f"maxpool2d: kernel {kernel} larger than input {h}x{w}"
        )
    if kernel == 2 and stride == 2 and h % 2 == 0 and w % 2 == 0:
        # non-overlapping 2x2 windows: explicit slices beat a flat argmax
        ho, wo = h // 2, w // 2
        a = x.data[:, :, 0::2, 0::2]
        b = x.data[:, :, 0::2, 1::2]
        cc = x.data[:, :, 1::2, 0::2]
        d = x.data[:, :, 1::2, 1::2]
        m01 = np.maximum(a, b)
        m23 = np.maximum(cc, d)
        out = np.maximum(m01, m23)
        # first-max index within the window, matching argmax tie handling
        lower = m23 > m01
        arg = np.where(lower, 2 + (d > cc), (b > a).astype(np.int8)).astype(np.int8)

        def grad_x(g):
            gx = np.empty((bs, c, ho, 2, wo, 2), dtype=np.float32)
            zero = np.float32(0.0)
            for i in range(2):
                for j in range(2):
                    gx[:, :, :, i, :, j] = np.where(arg == 2 * i + j, g, zero)
            return gx.reshape(bs, c, h, w)

        return _make(out, (x,), (grad_x,))

    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(bs, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_x(g):
        gx = np.zeros_like(x.data)
        ki, kj = np.divmod(arg, kernel)
        bi, ci, pi, qi = np.indices(arg.shape)
        np.add.at(gx, (bi, ci, pi * stride + ki, qi * stride + kj), g)
        return gx

    return _make(np.ascontiguousarray(out), (x,), (grad_x,))


def global_avg_pool(x: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,C) spatial mean."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"global_avg_pool expects 4-D input, got {x.data.shape}")
    return mean(x, axis=(2, 3))


def channel_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize each channel over the batch with learnable scale and shift.

    Training mode uses batch statistics over (B,H,W) per channel and updates
    the running buffers in place (new = momentum*old + (1-momentum)*batch);
    evaluation mode normalizes with the running buffers.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"channel_norm expects 4-D input, got {x.data.shape}")
    c = x.data.shape[1]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ShapeMismatchError(
            f"channel_norm: scale/shift must have shape ({c},), got "
            f"{scale.data.shape} and {shift.data.shape}"
        )

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    # fold normalize + affine into one multiply-add; xhat is rebuilt lazily
    # in the backward closures (shared) instead of materialized up front
    gain = (scale.data * inv).astype(np.float32).reshape(1, c, 1, 1)
    bias = (shift.data - mu * scale.data * inv).astype(np.float32).reshape(1, c, 1, 1)
    out = x.data * gain + bias
    cache = {}

    def _xhat():
        if "xhat" not in cache:
            cache["xhat"] = (
                (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
            ).astype(np.float32)
        return cache["xhat"]

    def grad_x(g):
        dxhat = g * scale.data.reshape(1, c, 1, 1)
        if not training:
            return dxhat * inv.reshape(1, c, 1, 1)
        xhat = _xhat()
        m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return inv.reshape(1, c, 1, 1) * (dxhat - m1 - xhat * m2)

    return _make(
        out,
        (x, scale, shift),
        (
            grad_x,
            lambda g: (g * _xhat()).sum(axis=(0, 2, 3)),
            lambda g: g.sum(axis=(0, 2, 3)),
        ),
    )
