"""Relevance-gated cross-modal fusion blocks.

Visual tokens query audio tokens (and vice versa) through plain scaled
dot products with no softmax, so the raw scores act as retention levels:
zero score means the other modality is ignored entirely, and scores scale
linearly with the queries.  Adaptive per-head weights then mix the
visual-side attention output back into the visual stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as tt
from .ops import Conv3d, LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass
class RetentionMaps:
    """Raw cross-modal relevance scores, surfaced for diagnostics.

    ret_a [B,H,Nv,Na] scales how much audio-value each visual token keeps;
    ret_v [B,H,Na,Nv] the reverse.  Not bounded to [0,1]: no softmax.
    """

    ret_a: Tensor
    ret_v: Tensor


def volume_to_tokens(x: Tensor) -> Tensor:
    """[B,C,T,H,W] -> [B,T*H*W,C]; token k is position k in row-major T,H,W."""
    b, c = x.shape[0], x.shape[1]
    n = x.shape[2] * x.shape[3] * x.shape[4]
    return x.reshape(b, c, n).transpose((0, 2, 1))


def tokens_to_volume(tokens: Tensor, extents) -> Tensor:
    t, h, w = extents
    b, n, c = tokens.shape
    if n != t * h * w:
        raise ValueError(f"{n} tokens do not fill a {t}x{h}x{w} volume")
    return tokens.transpose((0, 2, 1)).reshape(b, c, t, h, w)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B,N,H*dk] -> [B,H,N,dk]."""
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose((0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B,H,N,dk] -> [B,N,H*dk]."""
    b, h, n, dk = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b, n, h * dk)


def retention(v_q: Tensor, a_k: Tensor, a_q: Tensor, v_k: Tensor, d_k: int) -> RetentionMaps:
    """Scaled dot products per head; deliberately unnormalized."""
    scale = Tensor(1.0 / math.sqrt(d_k))
    ret_a = tt.matmul(v_q, a_k.transpose((0, 1, 3, 2))) * scale
    ret_v = tt.matmul(a_q, v_k.transpose((0, 1, 3, 2))) * scale
    return RetentionMaps(ret_a=ret_a, ret_v=ret_v)


def cross_attend(ret: RetentionMaps, v_v: Tensor, a_v: Tensor):
    """v2a = Ret_A . A_V + V_V and a2v = Ret_V . V_V + A_V, per head."""
    v2a = tt.matmul(ret.ret_a, a_v) + v_v
    a2v = tt.matmul(ret.ret_v, v_v) + a_v
    return v2a, a2v


class RavfBlock(Module):
    """One fusion block: cross-attention, head weighting, residual MLP."""

    def __init__(self, d_model: int, heads: int, rng, ff_dim=None, mlp_hidden=None):
        if d_model % heads:
            raise ValueError("d_model must split evenly across heads")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        ff_dim = ff_dim or 2 * d_model
        mlp_hidden = mlp_hidden or d_model // 2
        proj_std = 1.0 / math.sqrt(d_model)
        # six projections: queries/keys/values for both modalities
        self.w_vq = Linear(d_model, d_model, rng, init_std=proj_std)
        self.w_vk = Linear(d_model, d_model, rng, init_std=proj_std)
        self.w_vv = Linear(d_model, d_model, rng, init_std=proj_std)
        self.w_aq = Linear(d_model, d_model, rng, init_std=proj_std)
        self.w_ak = Linear(d_model, d_model, rng, init_std=proj_std)
        self.w_av = Linear(d_model, d_model, rng, init_std=proj_std)
        self.head_mlp_in = Linear(2 * d_model, mlp_hidden, rng)
        self.head_mlp_out = Linear(mlp_hidden, heads, rng)
        self.ffn_in = Linear(d_model, ff_dim, rng)
        self.ffn_out = Linear(ff_dim, d_model, rng)
        self.norm_attn = LayerNorm(d_model)
        self.norm_ffn = LayerNorm(d_model)

    def project(self, xtok: Tensor, atok: Tensor):
        """Six affine projections, reshaped to per-head [B,H,N,dk]."""
        h = self.heads
        v_q, v_k, v_v = (split_heads(w(xtok), h) for w in (self.w_vq, self.w_vk, self.w_vv))
        a_q, a_k, a_v = (split_heads(w(atok), h) for w in (self.w_aq, self.w_ak, self.w_av))
        return v_q, v_k, v_v, a_q, a_k, a_v

    def head_weights(self, v2a: Tensor, a2v: Tensor) -> Tensor:
        """Per-token softmax over heads from the joined attention outputs.

        a2v has no visual-token axis, so it is mean-pooled over audio
        tokens and broadcast across the visual tokens before the feature
        concat; heads are flattened into the feature axis.
        """
        b, _, n_v, _ = v2a.shape
        v2a_flat = merge_heads(v2a)  # [B,Nv,D]
        a2v_pooled = merge_heads(a2v).mean(axis=1, keepdims=True)  # [B,1,D]
        a2v_bcast = tt.expand(a2v_pooled, (b, n_v, self.d_model))
        joint = tt.concat([v2a_flat, a2v_bcast], axis=2)
        logits = self.head_mlp_out(tt.gelu(self.head_mlp_in(joint)))
        return tt.softmax(logits, axis=2)  # [B,Nv,H]

    def __call__(self, xtok: Tensor, atok: Tensor):
        v_q, v_k, v_v, a_q, a_k, a_v = self.project(xtok, atok)
        ret = retention(v_q, a_k, a_q, v_k, self.d_k)
        v2a, a2v = cross_attend(ret, v_v, a_v)
        c_weights = self.head_weights(v2a, a2v)
        # weight each head's slice, then flatten heads back to d_model
        w = c_weights.transpose((0, 2, 1)).reshape(
            c_weights.shape[0], self.heads, c_weights.shape[1], 1
        )
        fused = merge_heads(v2a * w)
        y = self.norm_attn(fused + xtok)
        out = self.norm_ffn(self.ffn_out(tt.gelu(self.ffn_in(y))) + y)
        # unbounded retention can blow up; fail loudly rather than train on NaNs
        out.assert_finite("fusion block output")
        return out, ret


class RavfStack(Module):
    """Project X0 to token width, run N fusion blocks, restore the volume.

    The visual stream is refined block to block; audio tokens are reused
    unchanged.  Returns the fused volume plus the last block's retention
    maps.
    """

    def __init__(self, c_in: int, d_model: int, heads: int, n_blocks: int, rng, **kw):
        if n_blocks < 1:
            raise ValueError("need at least one fusion block")
        self.proj = Conv3d(c_in, d_model, (1, 1, 1), rng,
                           init_std=1.0 / math.sqrt(c_in))
        self.blocks = [RavfBlock(d_model, heads, rng, **kw) for _ in range(n_blocks)]

    def __call__(self, x0: Tensor, atok: Tensor):
        extents = x0.shape[2:]
        xtok = volume_to_tokens(self.proj(x0))
        ret = None
        for block in self.blocks:
            xtok, ret = block(xtok, atok)
        return tokens_to_volume(xtok, extents), ret

    def zero_audio_projections(self):
        """Zero every audio-side projection: audio becomes invisible."""
        for block in self.blocks:
            for lin in (block.w_aq, block.w_ak, block.w_av):
                lin.w.data[:] = 0.0
                lin.b.data[:] = 0.0
