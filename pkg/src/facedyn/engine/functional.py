"""Layer-level differentiable operations.

Each function takes and returns :class:`Tensor`; forward values are
computed with vectorized numpy and the matching backward is recorded on
the graph. Convolutions use sliding-window gathers for the forward and
weight gradients and a kernel-offset scatter for the input gradient.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from facedyn.engine.tensor import Tensor, _from_op


def _check_stride(stride, op):
    for s in stride:
        if s < 1:
            raise ValueError(f"{op}: stride components must be >= 1, got {stride}")


def conv3d(x, weight, bias, stride=(1, 1, 1), padding=(0, 0, 0)):
    """3-D cross-correlation over [B,C,T,H,W] input with [Co,C,kt,kh,kw] weight."""
    if x.ndim != 5:
        raise ValueError(f"conv3d: input must be rank 5 [B,C,T,H,W], got shape {x.shape}")
    if weight.ndim != 5:
        raise ValueError(f"conv3d: weight must be rank 5 [Co,C,kt,kh,kw], got shape {weight.shape}")
    B, C, T, H, W = x.shape
    Co, Ci, kt, kh, kw = weight.shape
    if C != Ci:
        raise ValueError(f"conv3d: channel axis mismatch: input has C={C}, weight expects C={Ci}")
    if bias.shape != (Co,):
        raise ValueError(f"conv3d: bias axis mismatch: expected shape ({Co},), got {bias.shape}")
    _check_stride(stride, "conv3d")
    st, sh, sw = stride
    pt, ph, pw = padding
    Tp, Hp, Wp = T + 2 * pt, H + 2 * ph, W + 2 * pw
    for name, k, ext in (("temporal", kt, Tp), ("height", kh, Hp), ("width", kw, Wp)):
        if k > ext:
            raise ValueError(
                f"conv3d: zero-size output on {name} axis: kernel {k} exceeds padded extent {ext}"
            )
    To = (Tp - kt) // st + 1
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    # win: [B,C,To,Ho,Wo,kt,kh,kw]
    out_data = np.tensordot(win, weight.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 4, 1, 2, 3))
    out_data += bias.data[None, :, None, None, None]

    out = _from_op(out_data, (x, weight, bias))
    if out.requires_grad:
        wdata = weight.data

        def backward(g):
            if weight.requires_grad:
                weight._accum(np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
            if bias.requires_grad:
                bias._accum(g.sum(axis=(0, 2, 3, 4)))
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for it, ih, iw in itertools.product(range(kt), range(kh), range(kw)):
                    contrib = np.tensordot(g, wdata[:, :, it, ih, iw], axes=([1], [0]))
                    dxp[:, :, it:it + st * To:st, ih:ih + sh * Ho:sh, iw:iw + sw * Wo:sw] += (
                        contrib.transpose(0, 4, 1, 2, 3)
                    )
                x._accum(dxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W])

        out._backward = backward
    return out


def conv1d(x, weight, bias, stride=1, padding=0):
    """1-D cross-correlation over [B,C,L] input with [Co,C,k] weight."""
    if x.ndim != 3:
        raise ValueError(f"conv1d: input must be rank 3 [B,C,L], got shape {x.shape}")
    if weight.ndim != 3:
        raise ValueError(f"conv1d: weight must be rank 3 [Co,C,k], got shape {weight.shape}")
    B, C, L = x.shape
    Co, Ci, k = weight.shape
    if C != Ci:
        raise ValueError(f"conv1d: channel axis mismatch: input has C={C}, weight expects C={Ci}")
    if bias.shape != (Co,):
        raise ValueError(f"conv1d: bias axis mismatch: expected shape ({Co},), got {bias.shape}")
    _check_stride((stride,), "conv1d")
    Lp = L + 2 * padding
    if k > Lp:
        raise ValueError(f"conv1d: zero-size output: kernel {k} exceeds padded extent {Lp}")
    Lo = (Lp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]  # [B,C,Lo,k]
    out_data = np.tensordot(win, weight.data, axes=([1, 3], [1, 2]))  # [B,Lo,Co]
    out_data = np.ascontiguousarray(out_data.transpose(0, 2, 1))
    out_data += bias.data[None, :, None]

    out = _from_op(out_data, (x, weight, bias))
    if out.requires_grad:
        wdata = weight.data

        def backward(g):
            if weight.requires_grad:
                weight._accum(np.tensordot(g, win, axes=([0, 2], [0, 2])))
            if bias.requires_grad:
                bias._accum(g.sum(axis=(0, 2)))
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i in range(k):
                    contrib = np.tensordot(g, wdata[:, :, i], axes=([1], [0]))  # [B,Lo,C]
                    dxp[:, :, i:i + stride * Lo:stride] += contrib.transpose(0, 2, 1)
                x._accum(dxp[:, :, padding:padding + L])

        out._backward = backward
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over all axes but channel (axis 1).

    Train mode uses batch statistics and updates the running buffers in
    place; eval mode normalizes with the running buffers.
    """
    if x.ndim < 2:
        raise ValueError(f"batch_norm: input must have a channel axis, got shape {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({C},)")
    if not np.isfinite(x.data).all():
        raise ValueError("batch_norm: non-finite input")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    n = x.data.size // C

    if training:
        if n < 2:
            raise ValueError(f"batch_norm: need >= 2 values per channel in train mode, got {n}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    out = _from_op(out_data, (x, gamma, beta))
    if out.requires_grad:

        def backward(g):
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accum(g.sum(axis=axes))
            if x.requires_grad:
                gb = gamma.data.reshape(bshape)
                inv_b = inv.reshape(bshape)
                if training:
                    dxhat = g * gb
                    term = (
                        n * dxhat
                        - dxhat.sum(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                    )
                    x._accum(inv_b / n * term)
                else:
                    x._accum(g * gb * inv_b)

        out._backward = backward
    return out


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: y = x @ weight.T + bias."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ValueError(
            f"linear: trailing dimension mismatch: input has {x.shape[-1]}, weight expects {d_in}"
        )
    out_data = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (d_out,):
            raise ValueError(f"linear: bias must have shape ({d_out},), got {bias.shape}")
        out_data = out_data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _from_op(out_data, parents)
    if out.requires_grad:

        def backward(g):
            if x.requires_grad:
                x._accum(g @ weight.data)
            if weight.requires_grad:
                g2 = g.reshape(-1, d_out)
                x2 = x.data.reshape(-1, d_in)
                weight._accum(g2.T @ x2)
            if bias is not None and bias.requires_grad:
                bias._accum(g.reshape(-1, d_out).sum(axis=0))

        out._backward = backward
    return out


def relu(x):
    out = _from_op(np.maximum(x.data, 0), (x,))
    if out.requires_grad:
        mask = x.data > 0
        out._backward = lambda g: x._accum(g * mask)
    return out


def sigmoid(x):
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype, copy=False)
    out = _from_op(y, (x,))
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * y * (1.0 - y))
    return out


def softmax(x, axis=-1):
    """Softmax along `axis`; every slice sums to one."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _from_op(y, (x,))
    if out.requires_grad:

        def backward(g):
            inner = (g * y).sum(axis=axis, keepdims=True)
            x._accum(y * (g - inner))

        out._backward = backward
    return out


def dropout(x, p, training, gen):
    """Inverted dropout: train-time zeroing with 1/(1-p) rescale, eval identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (gen.random(x.shape) >= p).astype(x.dtype)
    scale = 1.0 / (1.0 - p)
    out = _from_op(x.data * keep * scale, (x,))
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * keep * scale)
    return out


def global_avg_pool(x):
    """Average over the trailing axis: [B,C,L] -> [B,C]."""
    if x.ndim != 3:
        raise ValueError(f"global_avg_pool: input must be rank 3 [B,C,L], got shape {x.shape}")
    return x.mean(axis=2)


def mse_loss(pred, target, reduction="mean"):
    """Sum (or mean) of squared differences over all elements."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch: pred {pred.shape} vs target {target.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"mse_loss: unknown reduction {reduction!r}")
    diff = pred - target
    sq = diff * diff
    return sq.mean() if reduction == "mean" else sq.sum()
