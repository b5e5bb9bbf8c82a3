"""Differentiable layer operations built on :mod:`umamba.tensor`.

All sequence ops use a channels-first layout ``(..., C, T)``; any leading
dimensions are treated as batch.
"""

from __future__ import annotations

import contextlib
from collections import Counter

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ssm as _ssm
from .tensor import Tensor, _make, _unbroadcast, as_tensor


_mac_tallies = []


@contextlib.contextmanager
def mac_tally():
    """Count the multiply-accumulates actually executed inside the block.

    Yields a :class:`collections.Counter` keyed by op name. Elementwise
    products (gating, masking, activations, normalization) are not counted.
    """
    tally = Counter()
    _mac_tallies.append(tally)
    try:
        yield tally
    finally:
        _mac_tallies.remove(tally)


def record_macs(kind, n):
    for tally in _mac_tallies:
        tally[kind] += int(n)


def _pair(padding):
    if isinstance(padding, (tuple, list)):
        left, right = padding
    else:
        left = right = padding
    if left < 0 or right < 0:
        raise ValueError("padding must be nonnegative")
    return int(left), int(right)


def _windows(x, k, stride):
    """Strided length-``k`` windows of the last axis: ``(..., C, T_out, k)``."""
    return sliding_window_view(x, k, axis=-1)[..., ::stride, :]


def _overlap_add(cols, stride, length):
    """Inverse of :func:`_windows`: scatter-add ``(..., C, T, k)`` frames."""
    T, k = cols.shape[-2], cols.shape[-1]
    out = np.zeros(cols.shape[:-2] + (length,), dtype=cols.dtype)
    span = stride * (T - 1) + 1
    for j in range(k):
        out[..., j:j + span:stride] += cols[..., :, j]
    return out


def _flat(a, nd):
    """Collapse all leading (batch) axes so einsum can reduce over them."""
    return a.reshape((-1,) + a.shape[a.ndim - nd:])


def conv1d_output_length(T, k, stride=1, padding=0):
    left, right = _pair(padding)
    return (T + left + right - k) // stride + 1


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """1-D cross-correlation.

    ``x`` is ``(..., C_in, T)`` and ``weight`` is ``(C_out, C_in/groups, k)``.
    ``padding`` is either a symmetric width or a ``(left, right)`` pair.
    The output length is ``floor((T + left + right - k) / stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    if x.ndim < 2 or weight.ndim != 3:
        raise ValueError(f"conv1d expects input (..., C_in, T) and kernel (C_out, C_in, k); got {x.shape}, {weight.shape}")
    c_out, cin_g, k = weight.shape
    c_in, T = x.shape[-2], x.shape[-1]
    if c_in != cin_g * groups or c_out % groups:
        raise ValueError(f"input has {c_in} channels but kernel {weight.shape} with groups={groups} expects {cin_g * groups}")
    left, right = _pair(padding)
    if k > T + left + right:
        raise ValueError(f"kernel length {k} exceeds padded input length {T + left + right}")
    lead = x.shape[:-2]
    xp = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(left, right)]) if (left or right) else x.data
    win = _windows(xp, k, stride)
    t_out = win.shape[-2]
    depthwise = groups == c_in == c_out
    if depthwise:
        w2 = weight.data[:, 0, :]
        out = np.einsum("...ctk,ck->...ct", win, w2)
    else:
        cout_g = c_out // groups
        wg = win.reshape(lead + (groups, cin_g, t_out, k))
        kg = weight.data.reshape(groups, cout_g, cin_g, k)
        out = np.einsum("...gitk,goik->...got", wg, kg, optimize=True).reshape(lead + (c_out, t_out))
    record_macs("conv1d", np.prod(lead, dtype=int) * c_out * cin_g * k * t_out)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)

    def bw(g):
        if depthwise:
            gw = np.einsum("bctk,bct->ck", _flat(win, 3), _flat(g, 2))[:, None, :]
            cols = g[..., None] * w2[:, None, :]
        else:
            gg = g.reshape(lead + (groups, c_out // groups, t_out))
            gw = np.einsum("bgitk,bgot->goik", _flat(wg, 4), _flat(gg, 3), optimize=True).reshape(weight.shape)
            cols = np.einsum("...got,goik->...gitk", gg, kg, optimize=True).reshape(lead + (c_in, t_out, k))
        gxp = _overlap_add(cols, stride, xp.shape[-1])
        gx = gxp[..., left:left + T]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))
        return grads

    return _make(out, parents, bw, "conv1d")


def transposed_conv1d(x, weight, bias=None, stride=1, groups=1):
    """Transposed 1-D convolution (overlap-add), the adjoint of :func:`conv1d`.

    ``x`` is ``(..., C_in, T)`` and ``weight`` is ``(C_in, C_out/groups, k)``.
    The output length is ``(T - 1) * stride + k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    if weight.ndim != 3 or x.ndim < 2:
        raise ValueError(f"transposed_conv1d expects input (..., C_in, T) and kernel (C_in, C_out, k); got {x.shape}, {weight.shape}")
    c_in, cout_g, k = weight.shape
    if x.shape[-2] != c_in or c_in % groups:
        raise ValueError(f"kernel channel layout {weight.shape} does not match input channels {x.shape[-2]}")
    T = x.shape[-1]
    lead = x.shape[:-2]
    cin_g = c_in // groups
    c_out = cout_g * groups
    length = (T - 1) * stride + k
    depthwise = groups == c_in and cout_g == 1
    if depthwise:
        w2 = weight.data[:, 0, :]
        cols = x.data[..., None] * w2[:, None, :]
    else:
        xg = x.data.reshape(lead + (groups, cin_g, T))
        kg = weight.data.reshape(groups, cin_g, cout_g, k)
        cols = np.einsum("...git,giok->...gotk", xg, kg, optimize=True).reshape(lead + (c_out, T, k))
    out = _overlap_add(cols, stride, length)
    record_macs("transposed_conv1d", np.prod(lead, dtype=int) * c_in * cout_g * k * T)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)

    def bw(g):
        win = _windows(g, k, stride)
        if depthwise:
            gx = np.einsum("...ctk,ck->...ct", win, w2)
            gw = np.einsum("bct,bctk->ck", _flat(x.data, 2), _flat(win, 3))[:, None, :]
        else:
            wing = win.reshape(lead + (groups, cout_g, T, k))
            gx = np.einsum("...gotk,giok->...git", wing, kg, optimize=True).reshape(x.shape)
            gw = np.einsum("bgit,bgotk->giok", _flat(xg, 3), _flat(wing, 4), optimize=True).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))
        return grads

    return _make(out, parents, bw, "transposed_conv1d")


def pointwise(x, weight, bias=None):
    """Per-frame linear map over channels: ``weight (C_out, C_in) @ x (..., C_in, T)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or weight.shape[1] != x.shape[-2]:
        raise ValueError(f"weight {weight.shape} does not map {x.shape[-2]} input channels")
    lead = x.shape[:-2]
    out = np.matmul(weight.data, x.data)
    record_macs("pointwise", np.prod(lead, dtype=int) * weight.shape[0] * weight.shape[1] * x.shape[-1])
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)

    def bw(g):
        gx = np.matmul(weight.data.T, g)
        gw = np.matmul(g, np.swapaxes(x.data, -1, -2))
        if lead:
            gw = gw.reshape((-1,) + weight.shape).sum(axis=0)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))
        return grads

    return _make(out, parents, bw, "pointwise")


def layer_norm_channels(x, gain, bias, eps=1e-8):
    """Normalize every frame over the channel axis, then scale and shift.

    ``x`` is ``(..., F, T)``; ``gain`` and ``bias`` have length ``F``.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ValueError("layer_norm_channels needs at least one channel")
    mu = x.data.mean(axis=-2, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data[:, None] * xhat + bias.data[:, None]
    red = tuple(range(x.ndim - 2)) + (x.ndim - 1,)

    def bw(g):
        gh = g * gain.data[:, None]
        gx = inv * (gh - gh.mean(axis=-2, keepdims=True) - xhat * (gh * xhat).mean(axis=-2, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gain, bias), bw, "layer_norm")


def selective_scan(x, delta, A, B, C, D=None, block_size=None):
    """Differentiable selective scan.

    Shapes: ``x`` and ``delta`` ``(..., F, T)``; ``A`` ``(F, N)``;
    ``B`` and ``C`` ``(..., N, T)``; ``D`` ``(F,)``. The forward pass is the
    parallel scan of :func:`umamba.ssm.selective_scan`; the backward pass
    runs the adjoint recurrence as a reversed scan.
    """
    x, delta, A, B, C = (as_tensor(t) for t in (x, delta, A, B, C))
    if np.any(delta.data <= 0):
        raise ValueError("selective scan needs strictly positive step sizes")
    q = 0.5 * delta.data[..., :, None, :] * A.data[:, :, None]
    den = 1.0 - q
    a_bar = (1.0 + q) / den
    b_bar = delta.data[..., :, None, :] * B.data[..., None, :, :] / den
    u = x.data[..., :, None, :]
    h = _ssm.associative_scan(a_bar, b_bar * u, block_size=block_size)
    y = np.einsum("...fnt,...nt->...ft", h, C.data)
    # two MACs for the state update, one for the readout, per state and step
    record_macs("selective_scan", 3 * h.size + (x.size if D is not None else 0))
    parents = [x, delta, A, B, C]
    if D is not None:
        D = as_tensor(D)
        y = y + D.data[:, None] * x.data
        parents.append(D)
    lead_axes = tuple(range(x.ndim - 2))

    def bw(gy):
        gC = np.einsum("...fnt,...ft->...nt", h, gy)
        gh = gy[..., :, None, :] * C.data[..., None, :, :]
        a_next = np.zeros_like(a_bar)
        a_next[..., :-1] = a_bar[..., 1:]
        G = _ssm.reverse_scan(a_next, gh, block_size=block_size)
        h_prev = np.zeros_like(h)
        h_prev[..., 1:] = h[..., :-1]
        gx = (G * b_bar).sum(axis=-2)
        gbb = G * u
        gq = G * h_prev * (2.0 / (den * den)) + gbb * b_bar / den
        gdelta = 0.5 * np.einsum("...fnt,fn->...ft", gq, A.data) + np.einsum("...fnt,...nt->...ft", gbb / den, B.data)
        gA = 0.5 * np.einsum("bfnt,bft->fn", _flat(gq, 3), _flat(delta.data, 2))
        gB = np.einsum("...fnt,...ft->...nt", gbb / den, delta.data)
        grads = [gx, gdelta, gA, gB, gC]
        if D is not None:
            gx = gx + gy * D.data[:, None]
            grads[0] = gx
            grads.append((gy * x.data).sum(axis=lead_axes + (x.ndim - 1,)))
        return grads

    return _make(y, parents, bw, "selective_scan")


def linear_interp_weights(n, target):
    """Indices and weights for endpoint-aligned linear resampling ``n -> target``."""
    if target == 1 or n == 1:
        pos = np.zeros(target)
    else:
        pos = np.arange(target) * (n - 1) / (target - 1)
    i0 = np.floor(pos).astype(np.intp)
    i0 = np.minimum(i0, n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    w = pos - i0
    return i0, i1, w

