"""Per-frame saliency over a whole video via a sliding window.

The model predicts the last frame of each window.  Frames from the window
size onward use plain forward windows with step one.  Earlier frames
reuse the first window, reversed (and cyclically shifted so the wanted
frame sits last); the audio is rearranged identically, reversing the
samples inside each frame slice, so audio-frame alignment survives the
flip.  For the very first frame this is exactly a time-reversed first
window.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioClip, frame_sample_bounds, hanning
from .model import SaliencyModel
from .tensor import Tensor, no_grad


def reversed_window_order(window: int, frame: int) -> np.ndarray:
    """0-indexed frame ids for an early target frame (frame < window-1).

    Reverse of [0..W) rotated so the target lands last; the target frame 0
    gives the plain reversal [W-1, ..., 0].
    """
    if not 0 <= frame < window:
        raise ValueError("frame outside the first window")
    return np.concatenate([
        np.arange(frame - 1, -1, -1, dtype=int),
        np.arange(window - 1, frame - 1, -1, dtype=int),
    ])


def _frame_slices(clip: AudioClip, fps: float, window: int):
    bounds = [frame_sample_bounds(clip.sample_rate, fps, f) for f in range(window + 1)]
    n = clip.samples.size
    slices = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        seg = np.zeros(hi - lo)
        if lo < n:
            take = min(hi, n) - lo
            seg[:take] = clip.samples[lo:lo + take]
        slices.append(seg)
    return slices


def reversed_window_audio(clip: AudioClip, fps: float, window: int,
                          frame: int) -> Tensor:
    """Audio for a reversed window: frame slices follow the frame order,
    samples inside each slice reversed, Hanning applied afterwards."""
    order = reversed_window_order(window, frame)
    slices = _frame_slices(clip, fps, window)
    seg = np.concatenate([slices[i][::-1] for i in order])
    return Tensor(seg * hanning(seg.size).data)


def forward_window_audio(clip: AudioClip, fps: float, start: int,
                         window: int) -> Tensor:
    from .audio import segment_for_window

    seg, _ = segment_for_window(clip, fps, start, window)
    return seg


def predict_video(model: SaliencyModel, frames: np.ndarray, audio: np.ndarray,
                  sample_rate: int, fps: float) -> np.ndarray:
    """frames [F,3,H,W] + waveform -> one normalized map per frame [F,H,W]."""
    window = model.cfg.window
    n_frames = frames.shape[0]
    if n_frames < window:
        raise ValueError(
            f"video has {n_frames} frames but the window needs {window}; "
            "not padding"
        )
    clip = AudioClip(audio, sample_rate)
    use_audio = model.fusion is not None
    maps = np.empty((n_frames,) + frames.shape[2:])

    def run(order_or_start, segment):
        if isinstance(order_or_start, np.ndarray):
            window_frames = frames[order_or_start]
        else:
            window_frames = frames[order_or_start:order_or_start + window]
        x = Tensor(np.ascontiguousarray(window_frames.transpose(1, 0, 2, 3))[None])
        with no_grad():
            out = model(x, segment if use_audio else None)
        return out.maps.data[0]

    for k in range(window - 1, n_frames):  # forward windows, step one
        start = k - window + 1
        seg = forward_window_audio(clip, fps, start, window) if use_audio else None
        maps[k] = run(start, seg)
    for k in range(window - 1):  # early frames from the reversed first window
        order = reversed_window_order(window, k)
        seg = reversed_window_audio(clip, fps, window, k) if use_audio else None
        maps[k] = run(order, seg)
    return maps
