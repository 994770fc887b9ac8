"""Cross-scale feature exchange and gated propagation of fused features.

The synergy block lets each pyramid level borrow from its neighbors twice
(pair-wise, then across the full triplet) and adds the result back onto
the level as a residual, so zero-initialized branch convs leave the level
untouched.  The regulator gates then push the fused low-resolution
audio-visual features up the pyramid, one sigmoid-gated hop per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .ops import Conv3d, Module, conv3d, global_avg_pool, resample_trilinear
from .tensor import Tensor


def _check_adjacent(hi: Tensor, lo: Tensor) -> None:
    for ax in (3, 4):
        if lo.shape[ax] != -(-hi.shape[ax] // 2):
            raise ValueError(
                f"scales not adjacent: {hi.shape[2:]} vs {lo.shape[2:]}"
            )


def _spatial(t: Tensor):
    return tuple(t.shape[2:])


class _UpConv(Module):
    """Upsample to a target resolution, then convolve."""

    def __init__(self, c_in, c_out, rng):
        self.conv = Conv3d(c_in, c_out, (1, 3, 3), rng, padding=(0, 1, 1))

    def __call__(self, x: Tensor, target) -> Tensor:
        return self.conv(resample_trilinear(x, target))


class _DownConv(Module):
    """Stride-2 spatial convolution; matches the pyramid's ceil halving."""

    def __init__(self, c_in, c_out, rng):
        self.conv = Conv3d(c_in, c_out, (1, 3, 3), rng,
                           stride=(1, 2, 2), padding=(0, 1, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)


class _SameConv(Module):
    def __init__(self, c_in, c_out, rng):
        self.conv = Conv3d(c_in, c_out, (1, 3, 3), rng, padding=(0, 1, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)


class MsBlock(Module):
    """Enhance one target level from its (up to two) resolution neighbors.

    Neighbors missing at pyramid boundaries simply drop their terms.  The
    working width equals the target level's channel count, and the final
    stage adds back onto the raw target feature.
    """

    def __init__(self, ch_high, ch_mid, ch_low, rng):
        w = ch_mid
        self.width = w
        # stage 1: one conv per present input level
        self.in_h = _SameConv(ch_high, w, rng) if ch_high else None
        self.in_m = _SameConv(ch_mid, w, rng)
        self.in_l = _SameConv(ch_low, w, rng) if ch_low else None
        # stage 2: neighbor exchange at every member's own resolution
        if ch_high:
            self.h_self = _SameConv(w, w, rng)
            self.h_from_m = _UpConv(w, w, rng)
            self.m_from_h = _DownConv(w, w, rng)
        self.m_self = _SameConv(w, w, rng)
        if ch_low:
            self.m_from_l = _UpConv(w, w, rng)
            self.l_self = _SameConv(w, w, rng)
            self.l_from_m = _DownConv(w, w, rng)
        # stage 3: collapse the triplet onto the target resolution
        self.out_h = _DownConv(w, w, rng) if ch_high else None
        self.out_m = _SameConv(w, w, rng)
        self.out_l = _UpConv(w, w, rng) if ch_low else None

    def __call__(self, x_high: Tensor | None, x_mid: Tensor, x_low: Tensor | None) -> Tensor:
        if (x_high is None) != (self.in_h is None) or (x_low is None) != (self.in_l is None):
            raise ValueError("MS block built for a different neighbor layout")
        if x_high is not None:
            _check_adjacent(x_high, x_mid)
        if x_low is not None:
            _check_adjacent(x_mid, x_low)
        mid_res = _spatial(x_mid)

        s1_h = self.in_h(x_high) if x_high is not None else None
        s1_m = self.in_m(x_mid)
        s1_l = self.in_l(x_low) if x_low is not None else None

        s2_m = self.m_self(s1_m)
        if s1_h is not None:
            s2_h = self.h_self(s1_h) + self.h_from_m(s1_m, _spatial(x_high))
            s2_m = s2_m + self.m_from_h(s1_h)
        if s1_l is not None:
            s2_m = s2_m + self.m_from_l(s1_l, mid_res)
            s2_l = self.l_self(s1_l) + self.l_from_m(s1_m)

        s3 = self.out_m(s2_m)
        if s1_h is not None:
            s3 = s3 + self.out_h(s2_h)
        if s1_l is not None:
            s3 = s3 + self.out_l(s2_l, mid_res)
        return s3 + x_mid

    def zero_branches(self):
        for _, p in self.parameters().items():
            p.data[:] = 0.0


class MrgGate(Module):
    """Per-channel sigmoid gate on the upsampled fused features.

    gate = GAP(sigmoid(conv(cat(upsampled fused, visual)))), applied
    multiplicatively before a final conv maps to the level's width.
    """

    def __init__(self, c_fused, c_visual, c_out, rng):
        self.gate_conv = Conv3d(c_fused + c_visual, c_fused, (1, 1, 1), rng)
        self.post = Conv3d(c_fused, c_out, (1, 3, 3), rng, padding=(0, 1, 1))

    def __call__(self, f_prev: Tensor, x_vis: Tensor):
        f_up = f_prev
        if _spatial(f_prev) != _spatial(x_vis):
            f_up = resample_trilinear(f_prev, _spatial(x_vis))
        if _spatial(f_up) != _spatial(x_vis):
            raise ValueError("gate inputs disagree on extents after upsampling")
        z = tt.concat([f_up, x_vis], axis=1)
        gate = global_avg_pool(tt.sigmoid(conv3d(z, self.gate_conv.params)))
        return conv3d(gate * f_up, self.post.params), gate


@dataclass
class FusionState:
    """Per-level fused features (decoder laterals) and the gate values."""

    features: list  # Tensor per level 0..3 (level 0 is the fusion output)
    gates: dict = field(default_factory=dict)  # level -> Tensor[B,C,1,1,1]


class SynergyStage(Module):
    """MS enhancement plus the chain of regulator gates over the pyramid.

    ``pairs`` picks how many MS&MRG pairs run, from the shallow end down:
    3 enhances X3..X1 and gates levels 1..3 (the default), 4 adds X0 with
    a level-0 self gate, 0 disables both.  ``use_ms`` / ``use_mrg``
    toggle the two halves independently for ablations.
    """

    def __init__(self, channels_deep_first, d_fused, rng, pairs=3,
                 use_ms=True, use_mrg=True):
        if not 0 <= pairs <= 4:
            raise ValueError("pairs must be in 0..4")
        c = list(channels_deep_first)  # [c0, c1, c2, c3]
        self.pairs = pairs
        self.use_ms = use_ms
        self.use_mrg = use_mrg
        self.ms_targets = []
        self.ms_blocks = []
        self.gate_levels = []
        self.gates = []
        if pairs > 0:
            targets = list(range(3, 3 - pairs, -1))  # 3,2,... down to 4-pairs
            self.ms_targets = targets
            if use_ms:
                for m in targets:
                    ch_high = c[m + 1] if m + 1 <= 3 else None
                    ch_low = c[m - 1] if m - 1 >= 0 else None
                    self.ms_blocks.append(MsBlock(ch_high, c[m], ch_low, rng))
            if use_mrg:
                self.gate_levels = sorted(targets)
                prev_ch = d_fused
                for lvl in self.gate_levels:
                    out_ch = c[lvl] if lvl > 0 else d_fused
                    self.gates.append(MrgGate(prev_ch, c[lvl], out_ch, rng))
                    prev_ch = out_ch

    def lateral_channels(self, d_fused, channels_deep_first):
        """Channel width of the decoder lateral at levels 1..3."""
        c = list(channels_deep_first)
        widths = {}
        prev = d_fused
        for lvl in (1, 2, 3):
            if self.use_mrg and lvl in self.gate_levels:
                prev = c[lvl] if lvl > 0 else d_fused
            widths[lvl] = prev
        return widths

    def enhance(self, pyramid):
        """Apply MS to the configured levels; untouched levels pass through."""
        levels = list(pyramid.as_list())  # deep first: X0..X3
        if not self.use_ms or not self.ms_blocks:
            return levels
        out = list(levels)
        for m, block in zip(self.ms_targets, self.ms_blocks):
            x_high = levels[m + 1] if m + 1 <= 3 else None
            x_low = levels[m - 1] if m - 1 >= 0 else None
            out[m] = block(x_high, levels[m], x_low)
        return out

    def run_gates(self, enhanced_levels, f_av0: Tensor) -> FusionState:
        """Chain the gates from the fusion output up to the shallow levels."""
        state = FusionState(features=[f_av0, None, None, None])
        gate_iter = dict(zip(self.gate_levels, self.gates))
        prev = f_av0
        if self.use_mrg and 0 in gate_iter:
            prev, g0 = gate_iter[0](f_av0, enhanced_levels[0])
            state.features[0] = prev
            state.gates[0] = g0
        for lvl in (1, 2, 3):
            if self.use_mrg and lvl in gate_iter:
                prev, g = gate_iter[lvl](prev, enhanced_levels[lvl])
                state.gates[lvl] = g
            else:
                prev = resample_trilinear(prev, _spatial(enhanced_levels[lvl]))
            if _spatial(prev) != _spatial(enhanced_levels[lvl]):
                raise ValueError(f"lateral extents broken at level {lvl}")
            state.features[lvl] = prev
        return state

    def __call__(self, pyramid, f_av0: Tensor) -> FusionState:
        return self.run_gates(self.enhance(pyramid), f_av0)
