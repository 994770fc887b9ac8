"""Two-phase training over synthetic scene datasets, plus checkpoints.

Phase one trains the visual path alone (no audio fed, so fusion and audio
parameters receive no gradient); phase two trains everything jointly.
An epoch is a fixed number of windows sampled uniformly over the training
videos; validation always scores the final window of each held-out video.
Everything is driven by one seeded generator, so equal seeds give
bit-identical checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import AudioClip, segment_for_window
from .config import RunConfig
from .dataio import list_samples, load_sample, parse_manifest, write_manifest, write_tensor, read_tensor
from .losses import LossWeights, batch_total_loss
from .metrics import cc_score, nss
from .model import SaliencyModel, build_model
from .optim import AdamW, ReduceLROnPlateau, clip_grad_norm
from .tensor import Tensor, backward, no_grad


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    checkpoint_dir: str
    history: list = field(default_factory=list)
    holdout: dict = field(default_factory=dict)


def window_inputs(sample, start: int, window: int):
    """Model inputs for frames [start, start+window): frames tensor and
    the Hanning-windowed audio segment."""
    frames = sample.frames[start:start + window]  # [W,3,H,W]
    frames = Tensor(np.ascontiguousarray(frames.transpose(1, 0, 2, 3))[None])
    clip = AudioClip(sample.audio, sample.sample_rate)
    segment, _ = segment_for_window(clip, sample.fps, start, window)
    return frames, segment


def _window_loss(model: SaliencyModel, sample, start: int, use_audio: bool,
                 weights: LossWeights, gate_log=None):
    frames, segment = window_inputs(sample, start, model.cfg.window)
    out = model(frames, segment if use_audio else None)
    if gate_log is not None and out.fusion is not None:
        for level, gate in sorted(out.fusion.gates.items()):
            gate_log.append((level, float(gate.data.mean())))
    gt = sample.density[start + model.cfg.window - 1]
    gt = gt / gt.sum()
    return batch_total_loss(out.maps, gt[None], weights)


def validation_loss(model, samples, use_audio: bool, weights) -> float:
    losses = []
    with no_grad():
        for sample in samples:
            start = sample.frames.shape[0] - model.cfg.window
            loss = _window_loss(model, sample, start, use_audio, weights)
            losses.append(loss.item())
    return float(np.mean(losses))


def evaluate_holdout(model, samples) -> dict:
    """Mean CC and NSS of the final-window prediction per held-out video."""
    ccs, nsss = [], []
    with no_grad():
        for sample in samples:
            start = sample.frames.shape[0] - model.cfg.window
            frames, segment = window_inputs(sample, start, model.cfg.window)
            out = model(frames, segment if model.fusion is not None else None)
            pred = out.maps.data[0]
            gt = sample.density[start + model.cfg.window - 1]
            ccs.append(cc_score(pred, gt / gt.sum()))
            nsss.append(nss(pred, sample.fixations[start + model.cfg.window - 1]))
    return {"cc": float(np.mean(ccs)), "nss": float(np.mean(nsss))}


def train(cfg: RunConfig, dataset_dir, out_dir, val_fraction=0.15,
          log=print, holdout_each_epoch=False) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    model = SaliencyModel(cfg, rng)

    names = list_samples(dataset_dir)
    if not names:
        raise ValueError(f"dataset {dataset_dir} is empty")
    n_val = max(1, int(round(len(names) * val_fraction))) if len(names) > 1 else 0
    val_names = names[len(names) - n_val:]
    train_names = names[:len(names) - n_val] or names
    train_samples = [load_sample(Path(dataset_dir) / n) for n in train_names]
    val_samples = [load_sample(Path(dataset_dir) / n) for n in val_names]

    weights = LossWeights(cfg.alpha1, cfg.alpha2)
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    sched = ReduceLROnPlateau(opt, factor=cfg.plateau_factor, patience=cfg.patience)

    history: list[EpochRecord] = []
    gate_rows: list[tuple] = []  # (epoch, step, level, mean gate)
    phases = [("visual", cfg.epochs_visual, False), ("joint", cfg.epochs_joint, True)]
    epoch = 0
    for phase_name, n_epochs, use_audio in phases:
        use_audio = use_audio and model.fusion is not None
        for _ in range(n_epochs):
            epoch += 1
            losses = []
            for step_i in range(cfg.steps_per_epoch):
                try:
                    batch = None
                    for _ in range(cfg.batch_size):
                        sample = train_samples[rng.integers(len(train_samples))]
                        start = int(rng.integers(0, sample.frames.shape[0] - cfg.window + 1))
                        gates: list = []
                        loss = _window_loss(model, sample, start, use_audio,
                                            weights, gate_log=gates)
                        gate_rows.extend(
                            (epoch, step_i + 1, lvl, val) for lvl, val in gates
                        )
                        batch = loss if batch is None else batch + loss
                except (FloatingPointError, ValueError) as exc:
                    raise TrainingDiverged(
                        f"degenerate model state at epoch {epoch} "
                        f"({phase_name}), step {len(losses) + 1}: {exc}"
                    ) from exc
                if cfg.batch_size > 1:
                    batch = batch * Tensor(1.0 / cfg.batch_size)
                value = batch.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} "
                        f"({phase_name}), step {len(losses) + 1}"
                    )
                backward(batch)
                clip_grad_norm(opt.params, cfg.grad_clip)
                opt.step()
                opt.zero_grad()
                losses.append(value)
            val = (validation_loss(model, val_samples, use_audio, weights)
                   if val_samples else float("nan"))
            if val_samples:
                sched.update(val)
            rec = EpochRecord(epoch, phase_name, float(np.mean(losses)), val, opt.lr)
            history.append(rec)
            extra = ""
            if holdout_each_epoch and val_samples:
                h = evaluate_holdout(model, val_samples)
                extra = f" cc {h['cc']:.3f} nss {h['nss']:.2f}"
            log(f"epoch {rec.epoch:3d} [{rec.phase}] train {rec.train_loss:.4f} "
                f"val {rec.val_loss:.4f} lr {rec.lr:.2e}{extra}")

    ckpt = out_dir / "checkpoint"
    save_checkpoint(ckpt, model)
    write_history_csv(out_dir / "loss_curve.csv", history)
    if gate_rows:
        with open(out_dir / "gate_log.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "step", "level", "mean_gate"])
            wr.writerows((e, s, l, f"{v:.6f}") for e, s, l, v in gate_rows)
    holdout = evaluate_holdout(model, val_samples) if val_samples else {}
    return TrainResult(checkpoint_dir=str(ckpt), history=history, holdout=holdout)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "phase", "train_loss", "val_loss", "lr"])
        for r in history:
            wr.writerow([r.epoch, r.phase, f"{r.train_loss:.8f}",
                         f"{r.val_loss:.8f}", f"{r.lr:.8e}"])


# ---------------------------------------------------------------------------
# checkpoints: a manifest plus one tensor file per parameter


def save_checkpoint(ckpt_dir, model: SaliencyModel) -> None:
    ckpt_dir = Path(ckpt_dir)
    params = model.parameters()
    entries = {}
    for f in fields(model.cfg):
        v = getattr(model.cfg, f.name)
        entries[f"cfg.{f.name}"] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
    for i, (name, p) in enumerate(params.items()):
        fname = f"params/{i:04d}.avt"
        write_tensor(ckpt_dir / fname, p)
        entries[f"param.{name}"] = fname
    write_manifest(ckpt_dir / "manifest.txt", entries)


def load_checkpoint(ckpt_dir) -> SaliencyModel:
    from .config import _coerce

    ckpt_dir = Path(ckpt_dir)
    entries = parse_manifest(ckpt_dir / "manifest.txt")
    defaults = RunConfig()
    overrides = {}
    for key, value in entries.items():
        if key.startswith("cfg."):
            name = key[4:]
            overrides[name] = _coerce(value, getattr(defaults, name))
    model = build_model(defaults.override(**overrides))
    values = {}
    for key, value in entries.items():
        if key.startswith("param."):
            values[key[6:]] = read_tensor(ckpt_dir / value)
    model.load_parameters(values)
    return model
