"""Bit-exact tensor files, plain-text manifests, synthetic A/V scenes.

Tensor file layout (normative, little-endian):
  magic "AVT1" | dtype code u8 (1=f32, 2=f64, 3=u8) | rank u8 |
  extents rank*u32 | payload row-major

Manifests are UTF-8 ``key = value`` lines with ``#`` comments.

The scene generator paints drifting Gaussian blobs over noise; every blob
pulses in brightness with its own rate and phase, one designated blob is
the "sounding" one.  In relevant mode the audio is a tone whose amplitude
envelope equals that blob's pulse (piecewise constant per frame, so the
correlation is exactly 1); in irrelevant mode the audio is noise drawn
from the sample's own seeded stream, statistically independent of the
scene.  Ground truth puts a Gaussian on the sounding blob (relevant) or
the largest blob (irrelevant).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"AVT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("uint8"): 3}


class TensorFileError(ValueError):
    pass


def write_tensor(path, t) -> None:
    """Write a Tensor or ndarray; f64 roundtrips bit-exactly."""
    arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else np.asarray(t))
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0 or any(e <= 0 for e in arr.shape):
        raise TensorFileError("refusing to write an empty-extent tensor")
    if any(e > 0xFFFFFFFF for e in arr.shape):
        raise TensorFileError("extent exceeds 32 bits")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(6)
        if len(head) < 6 or head[:4] != MAGIC:
            raise TensorFileError(f"{path}: bad magic")
        code, rank = head[4], head[5]
        if code not in _DTYPES:
            raise TensorFileError(f"{path}: unknown dtype code {code}")
        if rank < 1:
            raise TensorFileError(f"{path}: rank must be >= 1")
        raw = f.read(4 * rank)
        if len(raw) < 4 * rank:
            raise TensorFileError(f"{path}: truncated header")
        shape = struct.unpack(f"<{rank}I", raw)
        if any(e == 0 for e in shape):
            raise TensorFileError(f"{path}: empty extent")
        dtype = _DTYPES[code]
        count = int(np.prod(shape))
        payload = f.read(count * dtype.itemsize + 1)
        if len(payload) != count * dtype.itemsize:
            raise TensorFileError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# manifests


def parse_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_manifest(path, entries: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneConfig:
    height: int = 32
    width: int = 48
    frames: int = 40
    fps: int = 25
    sample_rate: int = 16000
    blobs: int = 3
    mode: str = "relevant"  # or "irrelevant"
    seed: int = 0
    tone_hz: int = 400  # integer periods per frame at the desk fps
    gt_sigma: float = 4.0
    max_speed: float = 0.15  # px/frame; keeps drift within a window small
    fixations_per_frame: int = 10

    def __post_init__(self):
        if self.mode not in ("relevant", "irrelevant"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if min(self.height, self.width, self.frames, self.blobs) < 1:
            raise ValueError("degenerate scene extents")


@dataclass
class Scene:
    frames: np.ndarray     # [F,3,H,W] in [0,1]
    audio: np.ndarray      # [S]
    density: np.ndarray    # [F,H,W], each frame sums to 1
    fixations: np.ndarray  # [F,H,W] u8 binary
    label: str
    envelope: np.ndarray   # [F] pulse of the sounding blob
    sound_blob: int
    target_blob: int


def _blob_tracks(cfg: SceneConfig, rng: np.random.Generator):
    h, w, f = cfg.height, cfg.width, cfg.frames
    sigmas = rng.uniform(min(h, w) / 12, min(h, w) / 6, size=cfg.blobs)
    margin = sigmas * 2.0
    pos = np.stack([rng.uniform(margin, h - margin),
                    rng.uniform(margin, w - margin)], axis=1)
    vel = rng.uniform(-cfg.max_speed, cfg.max_speed, size=(cfg.blobs, 2))
    rates = rng.uniform(0.5, 2.0, size=cfg.blobs)
    phases = rng.uniform(0, 2 * np.pi, size=cfg.blobs)
    colors = rng.uniform(0.55, 1.0, size=(cfg.blobs, 3))
    tracks = np.zeros((f, cfg.blobs, 2))
    cur = pos.copy()
    v = vel.copy()
    for t in range(f):
        tracks[t] = cur
        cur = cur + v
        # reflect at the walls so blobs stay inside the grid
        for k in range(cfg.blobs):
            for ax, extent in enumerate((h, w)):
                if cur[k, ax] < margin[k] or cur[k, ax] > extent - margin[k]:
                    v[k, ax] = -v[k, ax]
                    cur[k, ax] = np.clip(cur[k, ax], margin[k], extent - margin[k])
    return tracks, sigmas, rates, phases, colors


def _pulse(rates, phases, t_seconds):
    return 0.55 + 0.45 * np.sin(2 * np.pi * np.outer(t_seconds, rates) + phases)


def generate_scene(cfg: SceneConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    h, w, f = cfg.height, cfg.width, cfg.frames
    tracks, sigmas, rates, phases, colors = _blob_tracks(cfg, rng)
    sound_blob = int(rng.integers(cfg.blobs))
    t_seconds = np.arange(f) / cfg.fps
    pulses = _pulse(rates, phases, t_seconds)  # [F, blobs]

    yy, xx = np.mgrid[0:h, 0:w]
    frames = rng.uniform(0.0, 0.08, size=(f, 3, h, w))
    for t in range(f):
        for k in range(cfg.blobs):
            d2 = (yy - tracks[t, k, 0]) ** 2 + (xx - tracks[t, k, 1]) ** 2
            bump = np.exp(-d2 / (2 * sigmas[k] ** 2)) * pulses[t, k]
            frames[t] += colors[k][:, None, None] * bump[None]
    np.clip(frames, 0.0, 1.0, out=frames)

    target_blob = sound_blob if cfg.mode == "relevant" else int(np.argmax(sigmas))
    density = np.zeros((f, h, w))
    for t in range(f):
        d2 = (yy - tracks[t, target_blob, 0]) ** 2 + (xx - tracks[t, target_blob, 1]) ** 2
        g = np.exp(-d2 / (2 * cfg.gt_sigma ** 2))
        density[t] = g / g.sum()

    envelope = pulses[:, sound_blob]
    spf = cfg.sample_rate / cfg.fps
    n_samples = int(round(f * spf))
    if cfg.mode == "relevant":
        # piecewise-constant envelope per frame; integer tone periods per
        # frame make the per-frame RMS exactly proportional to the envelope
        bounds = np.round(np.arange(f + 1) * spf).astype(int)
        env_samples = np.repeat(envelope, np.diff(bounds))
        ts = np.arange(n_samples) / cfg.sample_rate
        audio = env_samples * np.sin(2 * np.pi * cfg.tone_hz * ts)
    else:
        audio = rng.normal(0.0, 0.35, size=n_samples)

    fixations = np.zeros((f, h, w), dtype=np.uint8)
    for t in range(f):
        idx = rng.choice(h * w, size=cfg.fixations_per_frame,
                         p=density[t].reshape(-1))
        fixations[t].reshape(-1)[idx] = 1

    return Scene(frames=frames, audio=audio, density=density,
                 fixations=fixations, label=cfg.mode, envelope=envelope,
                 sound_blob=sound_blob, target_blob=target_blob)


# ---------------------------------------------------------------------------
# datasets on disk


def write_sample(sample_dir, scene: Scene, cfg: SceneConfig) -> None:
    sample_dir = Path(sample_dir)
    write_tensor(sample_dir / "frames.avt", scene.frames)
    write_tensor(sample_dir / "audio.avt", scene.audio)
    write_tensor(sample_dir / "density.avt", scene.density)
    write_tensor(sample_dir / "fixations.avt", scene.fixations)
    write_manifest(sample_dir / "manifest.txt", {
        "frames_file": "frames.avt",
        "audio_file": "audio.avt",
        "density_file": "density.avt",
        "fixation_file": "fixations.avt",
        "sample_rate": cfg.sample_rate,
        "fps": cfg.fps,
        "relevance": scene.label,
    })


@dataclass
class Sample:
    name: str
    frames: np.ndarray
    audio: np.ndarray
    density: np.ndarray
    fixations: np.ndarray
    sample_rate: int
    fps: int
    relevance: str


def load_sample(sample_dir) -> Sample:
    sample_dir = Path(sample_dir)
    m = parse_manifest(sample_dir / "manifest.txt")
    frames = read_tensor(sample_dir / m["frames_file"])
    audio = read_tensor(sample_dir / m["audio_file"])
    density = read_tensor(sample_dir / m["density_file"])
    fixations = read_tensor(sample_dir / m["fixation_file"])
    fps = int(m["fps"])
    sr = int(m["sample_rate"])
    if frames.shape[0] != density.shape[0] or frames.shape[0] != fixations.shape[0]:
        raise ValueError(f"{sample_dir}: frame counts disagree")
    if frames.shape[2:] != density.shape[1:]:
        raise ValueError(f"{sample_dir}: density extents disagree with frames")
    expect = int(round(frames.shape[0] * sr / fps))
    if abs(audio.shape[0] - expect) > 1:
        raise ValueError(f"{sample_dir}: audio length off the frame clock")
    return Sample(sample_dir.name, frames, audio, density, fixations, sr, fps,
                  m.get("relevance", "relevant"))


def generate_dataset(out_dir, count: int, base: SceneConfig, seed: int,
                     modes=("relevant",)) -> list[str]:
    """Write ``count`` samples; mode cycles through ``modes``."""
    out_dir = Path(out_dir)
    names = []
    for i in range(count):
        mode = modes[i % len(modes)]
        cfg = SceneConfig(**{**base.__dict__, "mode": mode,
                             "seed": seed * 100003 + i})
        name = f"vid_{i:04d}"
        write_sample(out_dir / name, generate_scene(cfg), cfg)
        names.append(name)
    write_manifest(out_dir / "manifest.txt", {
        "samples": ",".join(names),
        "fps": base.fps,
        "sample_rate": base.sample_rate,
    })
    return names


def list_samples(dataset_dir) -> list[str]:
    m = parse_manifest(Path(dataset_dir) / "manifest.txt")
    return [s for s in m["samples"].split(",") if s]


# ---------------------------------------------------------------------------
# images


def write_pgm(path, values: np.ndarray) -> None:
    """Min-max scaled 8-bit grayscale PGM (binary P5)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM wants a 2-D array")
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    img = (scaled * 255.0).round().astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
