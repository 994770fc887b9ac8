"""Structured neural primitives on top of the tensor engine.

3D convolution (grouped, strided, dilated) through an im2col GEMM,
trilinear resampling as per-axis interpolation matrices, global average
and exponentially-weighted window pooling, a summed dilated-branch
pyramid, and plain affine layers.  All of it differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as tt
from .tensor import Tensor


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 extents, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# convolution


@dataclass
class Conv3dParams:
    """Kernel/bias plus geometry for one 3D convolution.

    kernel: [outC, inC/groups, kT, kH, kW]; output extent per axis is
    floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1 and must stay
    positive.
    """

    kernel: Tensor
    bias: Tensor | None = None
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    dilation: tuple[int, int, int] = (1, 1, 1)
    groups: int = 1

    def __post_init__(self):
        self.stride = _triple(self.stride)
        self.padding = _triple(self.padding)
        self.dilation = _triple(self.dilation)


def _conv_out_extent(n: int, k: int, s: int, p: int, d: int) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def _corr3d(data, kernel, bias, stride, padding, dilation, groups):
    """Raw im2col cross-correlation on ndarrays; also serves the backward."""
    B, C = data.shape[:2]
    O, Cg, kT, kH, kW = kernel.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    dt, dh, dw = dilation
    eT, eH, eW = dt * (kT - 1) + 1, dh * (kH - 1) + 1, dw * (kW - 1) + 1
    xp = np.pad(data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (eT, eH, eW), axis=(2, 3, 4))
    win = win[:, :, ::st, ::sh, ::sw, ::dt, ::dh, ::dw]
    oT, oH, oW = win.shape[2:5]
    Og = O // groups
    out = np.empty((B, O, oT, oH, oW))
    klen = Cg * kT * kH * kW
    for gi in range(groups):
        cols = np.ascontiguousarray(
            win[:, gi * Cg:(gi + 1) * Cg].transpose(0, 2, 3, 4, 1, 5, 6, 7)
        ).reshape(-1, klen)
        wmat = kernel[gi * Og:(gi + 1) * Og].reshape(Og, klen)
        out[:, gi * Og:(gi + 1) * Og] = (
            (cols @ wmat.T).reshape(B, oT, oH, oW, Og).transpose(0, 4, 1, 2, 3)
        )
    if bias is not None:
        out += bias.reshape(1, O, 1, 1, 1)
    return out


def _kernel_for_input_grad(kernel: np.ndarray, groups: int) -> np.ndarray:
    """Spatially flipped, channel-swapped kernel: correlating the output
    gradient with it (at stride 1) yields the input gradient."""
    O, Cg, kT, kH, kW = kernel.shape
    Og = O // groups
    flipped = kernel[:, :, ::-1, ::-1, ::-1]
    parts = []
    for gi in range(groups):
        blk = flipped[gi * Og:(gi + 1) * Og]  # [Og, Cg, ...]
        parts.append(blk.transpose(1, 0, 2, 3, 4))  # [Cg, Og, ...]
    return np.ascontiguousarray(np.concatenate(parts, axis=0))  # [C, Og, ...]


def conv3d(x: Tensor, p: Conv3dParams) -> Tensor:
    """Cross-correlate x [B,C,T,H,W] with p.kernel, plus bias."""
    if x.ndim != 5:
        raise ValueError(f"conv3d input must be [B,C,T,H,W], got {x.shape}")
    B, C, T, H, W = x.shape
    O, Cg, kT, kH, kW = p.kernel.shape
    g = p.groups
    if C != Cg * g:
        raise ValueError(f"conv3d: {C} input channels vs kernel for {Cg}*{g}")
    if O % g:
        raise ValueError("conv3d: output channels not divisible by groups")
    st, sh, sw = p.stride
    pt, ph, pw = p.padding
    dt, dh, dw = p.dilation
    oT = _conv_out_extent(T, kT, st, pt, dt)
    oH = _conv_out_extent(H, kH, sh, ph, dh)
    oW = _conv_out_extent(W, kW, sw, pw, dw)
    if min(oT, oH, oW) <= 0:
        raise ValueError(f"conv3d: non-positive output extent {(oT, oH, oW)}")

    eT, eH, eW = dt * (kT - 1) + 1, dh * (kH - 1) + 1, dw * (kW - 1) + 1
    Og = O // g
    kernel = p.kernel
    bias = p.bias
    klen = Cg * kT * kH * kW

    out = _corr3d(x.data, kernel.data,
                  None if bias is None else bias.data,
                  p.stride, p.padding, p.dilation, g)

    def grad_fn(gout):
        gout = np.ascontiguousarray(gout)
        if kernel.requires_grad:
            xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
            win = sliding_window_view(xp, (eT, eH, eW), axis=(2, 3, 4))
            win = win[:, :, ::st, ::sh, ::sw, ::dt, ::dh, ::dw]
            dkernel = np.empty_like(kernel.data)
            for gi in range(g):
                gmat = np.ascontiguousarray(
                    gout[:, gi * Og:(gi + 1) * Og].transpose(0, 2, 3, 4, 1)
                ).reshape(-1, Og)
                cols = np.ascontiguousarray(
                    win[:, gi * Cg:(gi + 1) * Cg].transpose(0, 2, 3, 4, 1, 5, 6, 7)
                ).reshape(-1, klen)
                dkernel[gi * Og:(gi + 1) * Og] = (gmat.T @ cols).reshape(
                    Og, Cg, kT, kH, kW
                )
            tt._accum(kernel, dkernel)
        if x.requires_grad:
            pad_back = (eT - 1 - pt, eH - 1 - ph, eW - 1 - pw)
            if (st, sh, sw) == (1, 1, 1) and min(pad_back) >= 0:
                # input gradient is itself a stride-1 correlation
                gk = _kernel_for_input_grad(kernel.data, g)
                dx = _corr3d(gout, gk, None, (1, 1, 1), pad_back,
                             p.dilation, g)
                tt._accum(x, dx)
            else:
                dxp = np.zeros((B, C, T + 2 * pt, H + 2 * ph, W + 2 * pw))
                for gi in range(g):
                    gmat = np.ascontiguousarray(
                        gout[:, gi * Og:(gi + 1) * Og].transpose(0, 2, 3, 4, 1)
                    ).reshape(-1, Og)
                    wmat = kernel.data[gi * Og:(gi + 1) * Og].reshape(Og, klen)
                    dcols = (gmat @ wmat).reshape(B, oT, oH, oW, Cg, kT, kH, kW)
                    dcols = dcols.transpose(0, 4, 1, 2, 3, 5, 6, 7)
                    dst = dxp[:, gi * Cg:(gi + 1) * Cg]
                    for i in range(kT):
                        ti = slice(i * dt, i * dt + st * oT, st)
                        for j in range(kH):
                            hj = slice(j * dh, j * dh + sh * oH, sh)
                            for k in range(kW):
                                wk = slice(k * dw, k * dw + sw * oW, sw)
                                dst[:, :, ti, hj, wk] += dcols[..., i, j, k]
                dx = dxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
                tt._accum(x, np.ascontiguousarray(dx))
        if bias is not None and bias.requires_grad:
            tt._accum(bias, gout.sum(axis=(0, 2, 3, 4)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return tt._make_node(out, parents, grad_fn)


# ---------------------------------------------------------------------------
# resampling


def _linear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align_corners=false: output i samples source position (i+.5)*in/out-.5
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m[np.arange(n_out), i0] += 1.0 - w1
    m[np.arange(n_out), i1] += w1
    return m


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # output cell i averages input cells overlapping [i, i+1) * in/out
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(math.floor(lo)), int(math.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            m[i, j] = (min(j + 1, hi) - max(j, lo)) / scale
    return m


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray | None:
    if n_out == n_in:
        return None
    return _linear_matrix(n_in, n_out) if n_out > n_in else _area_matrix(n_in, n_out)


def _apply_axis(data: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(m, data, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def resample_trilinear(x: Tensor, target) -> Tensor:
    """Resize the T,H,W axes of [B,C,T,H,W]; linear up, area-average down."""
    if x.ndim != 5:
        raise ValueError("resample expects [B,C,T,H,W]")
    target = _triple(target)
    if min(target) <= 0:
        raise ValueError("resample: zero target extent")
    mats = [(_axis_matrix(x.shape[2 + i], target[i]), 2 + i) for i in range(3)]
    out = x.data
    for m, ax in mats:
        if m is not None:
            out = _apply_axis(out, m, ax)

    def grad_fn(g):
        dx = g
        for m, ax in mats:
            if m is not None:
                dx = _apply_axis(dx, m.T, ax)
        tt._accum(x, np.ascontiguousarray(dx))

    return tt._make_node(np.ascontiguousarray(out), (x,), grad_fn)


# ---------------------------------------------------------------------------
# pooling


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over T,H,W per channel -> [B,C,1,1,1]."""
    if x.ndim != 5 or 0 in x.shape[2:]:
        raise ValueError("global_avg_pool expects a non-empty [B,C,T,H,W]")
    return x.mean(axis=(2, 3, 4), keepdims=True)


def _window_sum(x: Tensor, window: tuple[int, int, int]) -> Tensor:
    B, C, T, H, W = x.shape
    wt, wh, ww = window
    parts = x.reshape(B, C, T // wt, wt, H // wh, wh, W // ww, ww)
    return parts.sum(axis=(3, 5, 7))


def lip_pool(x: Tensor, logit_conv: Conv3dParams, window) -> Tensor:
    """Exp-of-learned-logits weighted pooling over non-overlapping windows.

    out = sum(x * exp(l)) / sum(exp(l)) per window, where l = conv(x).
    Odd extents are edge-replicated up to a window multiple first.
    """
    window = _triple(window)
    if min(window) < 1:
        raise ValueError("lip_pool: degenerate window")
    logits = conv3d(x, logit_conv)
    if logits.shape != x.shape:
        raise ValueError("lip_pool: logit map must match input shape")
    pads = [0, 0] + [(-x.shape[2 + i]) % window[i] for i in range(3)]
    if any(pads):
        x = tt.pad_end(x, pads, mode="edge")
        logits = tt.pad_end(logits, pads, mode="edge")
    # Per-window constant shift: cancels exactly in the ratio but pins the
    # max exponent of every window at 0, so denominators never underflow.
    B, C, T, H, W = logits.shape
    wt, wh, ww = window
    wmax = logits.data.reshape(B, C, T // wt, wt, H // wh, wh, W // ww, ww)
    wmax = wmax.max(axis=(3, 5, 7), keepdims=True)
    shift = Tensor(np.broadcast_to(wmax, (B, C, T // wt, wt, H // wh, wh, W // ww, ww))
                   .reshape(logits.shape))
    e = tt.exp(logits - shift)
    num = _window_sum(x * e, window)
    den = _window_sum(e, window)
    return num / den


# ---------------------------------------------------------------------------
# dilated branch pyramid


def aspp(x: Tensor, branches: list[Conv3dParams], mixer: Conv3dParams) -> Tensor:
    """Sum of parallel dilated convolutions, then a 1x1x1 mixing conv.

    Branches must agree on output shape; the mixer restores the input
    channel count so the overall shape is preserved.
    """
    outs = [conv3d(x, b) for b in branches]
    for o in outs[1:]:
        if o.shape != outs[0].shape:
            raise ValueError("aspp: branch output shapes differ")
    acc = outs[0]
    for o in outs[1:]:
        acc = acc + o
    out = conv3d(acc, mixer)
    if out.shape != x.shape:
        raise ValueError("aspp: output shape must equal input shape")
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x [..., d_in] @ w [d_in, d_out] + b [d_out]."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: {x.shape[-1]} != {w.shape[0]}")
    return tt.matmul(x, w) + b


# ---------------------------------------------------------------------------
# parameter containers


class Module:
    """Minimal parameter container; collects tensors by dotted name."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            self._collect(name, val, out)
        return out

    def _collect(self, prefix: str, val, out: dict[str, Tensor]) -> None:
        if isinstance(val, Tensor):
            if val.requires_grad:
                out[prefix] = val
        elif isinstance(val, Module):
            for k, v in val.parameters().items():
                out[f"{prefix}.{k}"] = v
        elif isinstance(val, (list, tuple)):
            for i, item in enumerate(val):
                self._collect(f"{prefix}.{i}", item, out)

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) ^ set(values)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)[:4]}...")
        for name, t in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


class Conv3d(Module):
    """Conv3dParams plus He-style init and a call operator."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, dilation=1,
                 groups=1, bias=True, init_std=None):
        kernel = _triple(kernel)
        fan_in = (in_ch // groups) * int(np.prod(kernel))
        std = math.sqrt(2.0 / fan_in) if init_std is None else init_std
        self.kernel = Tensor(
            rng.normal(0.0, std, size=(out_ch, in_ch // groups) + kernel),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self._geom = dict(stride=_triple(stride), padding=_triple(padding),
                          dilation=_triple(dilation), groups=groups)

    @property
    def params(self) -> Conv3dParams:
        return Conv3dParams(self.kernel, self.bias, **self._geom)

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.params)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, init_std=None, bias=True):
        std = math.sqrt(1.0 / d_in) if init_std is None else init_std
        self.w = Tensor(rng.normal(0.0, std, size=(d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = tt.matmul(x, self.w)
        return out + self.b if self.b is not None else out


class LayerNorm(Module):
    def __init__(self, d, eps=1e-6):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tt.layer_norm(x, self.gamma, self.beta, self.eps)


class AsppModule(Module):
    """Three dilation branches (spatial only) and a channel mixer."""

    def __init__(self, channels, rng, branch_ch=None, dilations=(1, 2, 3)):
        branch_ch = branch_ch or max(4, channels // 4)
        # branches are summed, so scale each down to keep variance level
        std = math.sqrt(2.0 / (channels * 9)) / math.sqrt(len(dilations))
        self.branches = [
            Conv3d(channels, branch_ch, (1, 3, 3), rng,
                   padding=(0, d, d), dilation=(1, d, d), init_std=std)
            for d in dilations
        ]
        self.mix = Conv3d(branch_ch, channels, (1, 1, 1), rng)

    def __call__(self, x: Tensor) -> Tensor:
        return aspp(x, [b.params for b in self.branches], self.mix.params)


class LipPool(Module):
    """Learned-logit window pooling; the 1x1x1 conv supplies the logits."""

    def __init__(self, channels, rng, window=(1, 2, 2)):
        # small logit gain: pooling starts near a plain window average
        self.logit_conv = Conv3d(channels, channels, (1, 1, 1), rng,
                                 init_std=0.1 / math.sqrt(channels))
        self.window = _triple(window)

    def __call__(self, x: Tensor) -> Tensor:
        return lip_pool(x, self.logit_conv.params, self.window)
