"""Run configuration: model topology, training knobs, desk data defaults.

One flat dataclass so a plain ``key = value`` file (same syntax as the
dataset manifests) can override any field.  Tuples are comma-separated in
files; booleans accept true/false/1/0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace


@dataclass
class RunConfig:
    # model topology
    channels: tuple = (16, 24, 32, 96)  # X3, X2, X1, X0
    d_model: int = 96
    heads: int = 4
    ravf_blocks: int = 2
    ffn_dim: int = 192
    head_mlp_hidden: int = 48
    audio_tokens: int = 4
    audio_widths: tuple = (16, 32, 64)
    fusion: str = "ravf"  # ravf | add | mul | concat | bilinear | none
    pairs: int = 3
    use_ms: bool = True
    use_mrg: bool = True
    decoder_channels: tuple = (32, 24, 16)
    head_width: int = 8
    bilinear_rank: int = 16
    window: int = 32

    # optimization
    lr: float = 2.5e-4
    grad_clip: float = 1.0  # global-norm cap; the correlation term's
    # gradient scales like 1/std(P) and dwarfs the KL term early on
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    plateau_factor: float = 0.5
    epochs_visual: int = 5
    epochs_joint: int = 6
    steps_per_epoch: int = 50
    batch_size: int = 1
    alpha1: float = -0.1
    alpha2: float = -0.1
    seed: int = 7

    # desk-scale synthetic data
    height: int = 32
    width: int = 48
    frames_per_video: int = 40
    fps: int = 25
    sample_rate: int = 16000
    blobs: int = 3

    FUSION_METHODS = ("none", "add", "mul", "concat", "bilinear", "ravf")

    def __post_init__(self):
        if self.fusion not in self.FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.fusion!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 <= self.pairs <= 4:
            raise ValueError("pairs must be in 0..4")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.channels[-1] != self.d_model:
            raise ValueError("deepest channel width must equal d_model")

    def override(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"bad boolean {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Overlay ``key = value`` lines from a file onto the defaults."""
    from .dataio import parse_manifest

    base = base or RunConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    overrides = {}
    for key, value in parse_manifest(path).items():
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        overrides[key] = _coerce(value, defaults[key])
    return base.override(**overrides)
