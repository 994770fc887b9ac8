"""Toy 3D-convolutional encoder with a four-scale feature pyramid.

Each block runs a spatial conv, a grouped temporal conv, a dilated-branch
refinement and an exp-weighted pooling step that halves H and W.  The tap
after each block becomes one pyramid level; X3 is the shallow
high-resolution level and X0 the deep low-resolution one that feeds the
cross-modal fusion.  Temporal extent is preserved throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tt
from .ops import AsppModule, Conv3d, LipPool, Module
from .tensor import Tensor

DEFAULT_CHANNELS = (16, 24, 32, 96)  # X3, X2, X1, X0


@dataclass
class FeaturePyramid:
    """Levels ordered deep-to-shallow; extents double from X0 up to X3."""

    x0: Tensor
    x1: Tensor
    x2: Tensor
    x3: Tensor

    def as_list(self):
        return [self.x0, self.x1, self.x2, self.x3]

    def validate(self):
        levels = self.as_list()
        batch = levels[0].shape[0]
        for lo, hi in zip(levels[:-1], levels[1:]):
            if hi.shape[0] != batch:
                raise ValueError("pyramid levels disagree on batch size")
            for ax in (3, 4):
                if -(-hi.shape[ax] // 2) != lo.shape[ax]:
                    raise ValueError(
                        f"pyramid halving broken: {hi.shape} -> {lo.shape}"
                    )
        return self


class EncoderBlock(Module):
    def __init__(self, in_ch, out_ch, rng, temporal_kernel=5, group_width=8):
        self.spatial = Conv3d(in_ch, out_ch, (1, 3, 3), rng, padding=(0, 1, 1))
        groups = max(1, out_ch // group_width)
        pad_t = (temporal_kernel - 1) // 2
        self.temporal = Conv3d(out_ch, out_ch, (temporal_kernel, 1, 1), rng,
                               padding=(pad_t, 0, 0), groups=groups)
        self.refine = AsppModule(out_ch, rng)
        self.pool = LipPool(out_ch, rng, window=(1, 2, 2))

    def __call__(self, x: Tensor) -> Tensor:
        x = tt.gelu(self.spatial(x))
        x = tt.gelu(self.temporal(x))
        return self.pool(self.refine(x))


class VisualEncoder(Module):
    """frames [B,3,T,H,W] -> FeaturePyramid.  T must cover the temporal kernels."""

    def __init__(self, rng, channels=DEFAULT_CHANNELS, in_ch=3):
        chans = (in_ch,) + tuple(channels)
        self.blocks = [EncoderBlock(chans[i], chans[i + 1], rng) for i in range(4)]

    def __call__(self, frames: Tensor) -> FeaturePyramid:
        if frames.ndim != 5:
            raise ValueError("expected frames [B,3,T,H,W]")
        taps = []
        x = frames
        for block in self.blocks:
            x = block(x)
            taps.append(x)
        x3, x2, x1, x0 = taps
        return FeaturePyramid(x0=x0, x1=x1, x2=x2, x3=x3).validate()
