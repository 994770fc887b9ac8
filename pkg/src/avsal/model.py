"""Full saliency network: encoders, fusion, synergy stage, decoder.

The decoder walks the pyramid back up: each block upsamples the running
state, concatenates the matching gated lateral and convolves; the head
collapses time with a last-frame-weighted temporal convolution, squashes
through a sigmoid and normalizes the map to a unit-sum distribution.

Alternative fusion methods (element-wise, concat, low-rank bilinear) sit
behind the same interface as the relevance-gated stack so ablations can
swap them by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .audio import AudioEncoder
from .config import RunConfig
from .ops import Conv3d, Linear, Module, resample_trilinear
from .ravf import RavfStack, RetentionMaps, tokens_to_volume, volume_to_tokens
from .synergy import FusionState, SynergyStage
from .tensor import Tensor
from .visual import VisualEncoder


@dataclass
class ModelOutput:
    maps: Tensor  # [B,H,W], each map sums to 1
    retention: RetentionMaps | None
    fusion: FusionState | None


class ElementwiseFusion(Module):
    """Pooled audio broadcast onto the deep visual features, + or *."""

    def __init__(self, c0, d_model, rng, mode):
        self.mode = mode
        self.proj = Linear(d_model, c0, rng)
        if mode == "mul":
            # start near an identity gate so the visual path survives init
            self.proj.b.data[:] = 1.0

    def __call__(self, x0: Tensor, atok: Tensor):
        pooled = self.proj(atok.mean(axis=1))  # [B, c0]
        b, c = pooled.shape
        vec = pooled.reshape(b, c, 1, 1, 1)
        return (x0 + vec if self.mode == "add" else x0 * vec), None


class ConcatFusion(Module):
    def __init__(self, c0, d_model, rng):
        self.proj = Linear(d_model, c0, rng)
        self.mix = Conv3d(2 * c0, c0, (1, 1, 1), rng)

    def __call__(self, x0: Tensor, atok: Tensor):
        pooled = self.proj(atok.mean(axis=1))
        b, c = pooled.shape
        t, h, w = x0.shape[2:]
        vec = tt.expand(pooled.reshape(b, c, 1, 1, 1), (b, c, t, h, w))
        return self.mix(tt.concat([x0, vec], axis=1)), None


class BilinearFusion(Module):
    """Low-rank bilinear interaction of visual tokens and pooled audio."""

    def __init__(self, c0, d_model, rng, rank=16):
        self.vis_in = Linear(c0, rank, rng)
        self.aud_in = Linear(d_model, rank, rng)
        self.out = Linear(rank, c0, rng)

    def __call__(self, x0: Tensor, atok: Tensor):
        tok = volume_to_tokens(x0)  # [B,N,c0]
        u = self.vis_in(tok)
        v = self.aud_in(atok.mean(axis=1))  # [B,rank]
        v = v.reshape(v.shape[0], 1, v.shape[1])
        fused = self.out(u * v)
        return x0 + tokens_to_volume(fused, x0.shape[2:]), None


class Decoder(Module):
    """Three lateral-fusing upsample blocks, a full-resolution head, and a
    temporal collapse onto the window's last frame."""

    def __init__(self, cfg: RunConfig, lateral_ch: dict, rng):
        d = cfg.d_model
        dec = cfg.decoder_channels
        self.blocks = []
        prev = d
        for i, lvl in enumerate((1, 2, 3)):
            self.blocks.append(
                Conv3d(prev + lateral_ch[lvl], dec[i], (1, 3, 3), rng, padding=(0, 1, 1))
            )
            prev = dec[i]
        self.head = Conv3d(prev, cfg.head_width, (1, 3, 3), rng, padding=(0, 1, 1))
        self.to_map = Conv3d(cfg.head_width, 1, (1, 1, 1), rng)
        # temporal collapse: learned, initialized to favor the last frame
        w = cfg.window
        profile = np.exp((np.arange(w) - (w - 1)) / max(1.0, w / 4.0))
        profile /= profile.sum()
        self.collapse = Tensor(profile.reshape(1, 1, w, 1, 1), requires_grad=True)
        self.collapse_bias = Tensor(np.zeros(1), requires_grad=True)

    def __call__(self, state: FusionState, out_hw) -> Tensor:
        from .ops import Conv3dParams, conv3d

        x = state.features[0]
        for block, lvl in zip(self.blocks, (1, 2, 3)):
            lateral = state.features[lvl]
            x = resample_trilinear(x, lateral.shape[2:])
            x = tt.gelu(block(tt.concat([x, lateral], axis=1)))
        x = resample_trilinear(x, (x.shape[2],) + tuple(out_hw))
        x = tt.gelu(self.head(x))
        x = self.to_map(x)  # [B,1,T,H,W]
        p = Conv3dParams(self.collapse, self.collapse_bias)
        x = conv3d(x, p)  # [B,1,1,H,W]
        s = tt.sigmoid(x.reshape(x.shape[0], out_hw[0], out_hw[1]))
        sums = s.data.sum(axis=(1, 2))
        if not np.all(np.isfinite(sums)) or np.any(sums == 0.0):
            raise FloatingPointError("saliency head saturated: map sum is "
                                     "zero or non-finite")
        return s / s.sum(axis=(1, 2), keepdims=True)


class SaliencyModel(Module):
    """frames [B,3,T,H,W] (+ optional audio) -> per-sample saliency maps."""

    def __init__(self, cfg: RunConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = VisualEncoder(rng, channels=cfg.channels)
        c0 = cfg.channels[-1]
        self.audio_encoder = None
        self.fusion = None
        if cfg.fusion != "none":
            self.audio_encoder = AudioEncoder(
                cfg.d_model, rng, n_tokens=cfg.audio_tokens, widths=cfg.audio_widths
            )
            if cfg.fusion == "ravf":
                self.fusion = RavfStack(
                    c0, cfg.d_model, cfg.heads, cfg.ravf_blocks, rng,
                    ff_dim=cfg.ffn_dim, mlp_hidden=cfg.head_mlp_hidden,
                )
            elif cfg.fusion in ("add", "mul"):
                self.fusion = ElementwiseFusion(c0, cfg.d_model, rng, cfg.fusion)
            elif cfg.fusion == "concat":
                self.fusion = ConcatFusion(c0, cfg.d_model, rng)
            elif cfg.fusion == "bilinear":
                self.fusion = BilinearFusion(c0, cfg.d_model, rng, cfg.bilinear_rank)
        channels_deep_first = tuple(reversed(cfg.channels))  # c0..c3
        self.synergy = SynergyStage(
            channels_deep_first, cfg.d_model, rng, pairs=cfg.pairs,
            use_ms=cfg.use_ms, use_mrg=cfg.use_mrg,
        )
        lateral_ch = self.synergy.lateral_channels(cfg.d_model, channels_deep_first)
        self.decoder = Decoder(cfg, lateral_ch, rng)

    def encode_audio_batch(self, audio) -> Tensor:
        """One 1-D segment per sample -> [B, n_tokens, d_model]."""
        segs = audio if isinstance(audio, (list, tuple)) else [audio]
        toks = [self.audio_encoder(s if isinstance(s, Tensor) else Tensor(s))
                for s in segs]
        return toks[0] if len(toks) == 1 else tt.concat(toks, axis=0)

    def __call__(self, frames: Tensor, audio=None) -> ModelOutput:
        pyramid = self.encoder(frames)
        retention = None
        if audio is None or self.fusion is None:
            f_av0 = pyramid.x0
        else:
            atok = self.encode_audio_batch(audio)
            if isinstance(self.fusion, RavfStack):
                f_av0, retention = self.fusion(pyramid.x0, atok)
            else:
                f_av0, _ = self.fusion(pyramid.x0, atok)
        state = self.synergy(pyramid, f_av0)
        maps = self.decoder(state, frames.shape[3:])
        return ModelOutput(maps=maps, retention=retention, fusion=state)


def build_model(cfg: RunConfig, seed: int | None = None) -> SaliencyModel:
    return SaliencyModel(cfg, np.random.default_rng(cfg.seed if seed is None else seed))
