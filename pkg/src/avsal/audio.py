"""Frame-synchronized audio segmentation and a small strided conv encoder.

Segments are cut so their sample boundaries track the video frame clock
(cumulative rounding, so drift never exceeds one sample), tapered with a
Hanning window against segmentation edge effects, and encoded into a
short token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .ops import Conv3d, Module
from .tensor import Tensor


@dataclass
class AudioClip:
    samples: np.ndarray  # 1-D float waveform
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")


def hanning(n: int) -> Tensor:
    """Symmetric cosine taper w[k] = 0.5*(1 - cos(2*pi*k/(n-1)))."""
    if n < 2:
        raise ValueError("hanning window needs n >= 2")
    k = np.arange(n)
    return Tensor(0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1))))


def frame_sample_bounds(sample_rate: int, fps: float, frame: int) -> int:
    """Sample index of a frame boundary, rounded on the cumulative clock."""
    return int(round(frame * sample_rate / fps))


def extract_span(clip: AudioClip, fps: float, start_frame: int, n_frames: int):
    """Raw samples covering [start_frame, start_frame + n_frames).

    The tail past end-of-audio is zero-padded; the second return value
    flags whether padding happened.
    """
    if n_frames <= 0:
        raise ValueError("empty frame selection")
    s0 = frame_sample_bounds(clip.sample_rate, fps, start_frame)
    s1 = frame_sample_bounds(clip.sample_rate, fps, start_frame + n_frames)
    if s1 <= s0:
        raise ValueError("empty sample selection")
    if s0 < 0:
        raise ValueError("segment starts before the waveform")
    n = clip.samples.size
    seg = np.zeros(s1 - s0)
    hi = min(s1, n)
    if s0 < n:
        seg[: hi - s0] = clip.samples[s0:hi]
    return seg, s1 > n


def segment_for_window(clip: AudioClip, fps: float, start_frame: int, n_frames: int):
    """Hanning-windowed segment for one video window; returns (Tensor, padded)."""
    seg, padded = extract_span(clip, fps, start_frame, n_frames)
    win = hanning(seg.size).data
    return Tensor(seg * win), padded


class AudioEncoder(Module):
    """Four strided 1-D convolutions, then mean-pooling to a few tokens.

    Each layer has kernel 5, stride 4, padding 2, so the position count
    divides by exactly 4 per layer once the input is trimmed to a multiple
    of the total stride (256).  Output: [1, n_tokens, d_model].
    """

    TOTAL_STRIDE = 256

    def __init__(self, d_model: int, rng, n_tokens: int = 4, widths=(16, 32, 64)):
        chans = (1,) + tuple(widths) + (d_model,)
        self.convs = [
            Conv3d(chans[i], chans[i + 1], (5, 1, 1), rng,
                   stride=(4, 1, 1), padding=(2, 0, 0))
            for i in range(len(chans) - 1)
        ]
        self.n_tokens = n_tokens
        self.d_model = d_model

    def receptive_field(self) -> int:
        return self.TOTAL_STRIDE

    def __call__(self, segment: Tensor) -> Tensor:
        if segment.ndim != 1:
            raise ValueError("audio encoder expects a 1-D segment")
        usable = (segment.size // self.TOTAL_STRIDE) * self.TOTAL_STRIDE
        if usable == 0:
            raise ValueError(
                f"segment of {segment.size} samples is shorter than the "
                f"encoder receptive field ({self.TOTAL_STRIDE})"
            )
        # trim to a stride multiple, then shape to [B=1, C=1, L, 1, 1]
        x = _trim(segment, usable).reshape(1, 1, usable, 1, 1)
        for conv in self.convs:
            x = tt.gelu(conv(x))
        # x: [1, d_model, L/256, 1, 1] -> tokens [1, n_tokens, d_model]
        positions = x.shape[2]
        feats = x.reshape(1, self.d_model, positions).transpose((0, 2, 1))
        pool = Tensor(_pool_matrix(positions, self.n_tokens))
        return tt.matmul(pool, feats)


def _trim(segment: Tensor, usable: int) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(segment.data)
        full[:usable] = g
        tt._accum(segment, full)

    return tt._make_node(segment.data[:usable].copy(), (segment,), grad_fn)


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Mean over contiguous chunks with floor boundaries (adaptive pooling)."""
    if n_in < n_out:
        raise ValueError(f"cannot pool {n_in} positions into {n_out} tokens")
    m = np.zeros((n_out, n_in))
    bounds = [n_in * i // n_out for i in range(n_out + 1)]
    for i in range(n_out):
        lo, hi = bounds[i], bounds[i + 1]
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m
