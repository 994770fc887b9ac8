"""Ablation harnesses: fusion method sweep, synergy pair-count sweep, and
retention-map export.

Every arm trains from the same seed on the same dataset, then scores
SIM/CC/NSS/AUC-J on held-out videos (a few window positions per video),
emitting one CSV row per arm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataio import list_samples, load_sample, write_pgm, write_tensor
from .metrics import auc_judd, cc_score, nss, sim_score
from .model import SaliencyModel
from .tensor import no_grad
from .train import train, window_inputs


@dataclass
class ArmResult:
    name: str
    sim: float
    cc: float
    nss: float
    auc_judd: float


def _val_split(dataset_dir, val_fraction=0.15):
    names = list_samples(dataset_dir)
    n_val = max(1, int(round(len(names) * val_fraction)))
    return [load_sample(Path(dataset_dir) / n) for n in names[len(names) - n_val:]]


def score_model(model: SaliencyModel, samples, window_ends=(0, 4, 8)) -> ArmResult:
    """Mean metrics over a few window positions per held-out video."""
    sims, ccs, nsss, aucs = [], [], [], []
    w = model.cfg.window
    with no_grad():
        for sample in samples:
            f = sample.frames.shape[0]
            for back in window_ends:
                start = f - w - back
                if start < 0:
                    continue
                frames, segment = window_inputs(sample, start, w)
                out = model(frames, segment if model.fusion is not None else None)
                pred = out.maps.data[0]
                last = start + w - 1
                gt = sample.density[last] / sample.density[last].sum()
                sims.append(sim_score(pred, gt))
                if np.ptp(pred) > 0:
                    ccs.append(cc_score(pred, gt))
                    nsss.append(nss(pred, sample.fixations[last]))
                aucs.append(auc_judd(pred, sample.fixations[last]))
    return ArmResult(
        name="",
        sim=float(np.mean(sims)),
        cc=float(np.mean(ccs)) if ccs else 0.0,
        nss=float(np.mean(nsss)) if nsss else 0.0,
        auc_judd=float(np.mean(aucs)),
    )


def _train_arm(cfg: RunConfig, dataset_dir, out_dir, log) -> ArmResult:
    from .train import load_checkpoint

    result = train(cfg, dataset_dir, out_dir, log=log)
    model = load_checkpoint(result.checkpoint_dir)
    arm = score_model(model, _val_split(dataset_dir))
    return arm


def write_arm_csv(path, rows: list[ArmResult], key="method") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([key, "SIM", "CC", "NSS", "AUCJ"])
        for r in rows:
            wr.writerow([r.name, f"{r.sim:.6f}", f"{r.cc:.6f}",
                         f"{r.nss:.6f}", f"{r.auc_judd:.6f}"])


def ablate_fusion(dataset_dir, methods, base_cfg: RunConfig, out_dir,
                  log=print) -> list[ArmResult]:
    """Train one model per fusion method from a common seed and score it."""
    out_dir = Path(out_dir)
    rows = []
    for method in methods:
        if method not in RunConfig.FUSION_METHODS:
            raise ValueError(f"unknown fusion method {method!r}")
        log(f"--- fusion arm: {method}")
        cfg = base_cfg.override(fusion=method)
        arm = _train_arm(cfg, dataset_dir, out_dir / f"fusion_{method}", log)
        arm.name = method
        rows.append(arm)
    write_arm_csv(out_dir / "fusion_ablation.csv", rows, key="method")
    return rows


def ablate_pairs(dataset_dir, counts, base_cfg: RunConfig, out_dir,
                 log=print) -> list[ArmResult]:
    """Train one model per synergy pair count (0..4) and score it."""
    out_dir = Path(out_dir)
    rows = []
    for n in counts:
        log(f"--- pairs arm: {n}")
        cfg = base_cfg.override(pairs=int(n))
        arm = _train_arm(cfg, dataset_dir, out_dir / f"pairs_{n}", log)
        arm.name = str(n)
        rows.append(arm)
    write_arm_csv(out_dir / "pairs_ablation.csv", rows, key="pairs")
    return rows


# ---------------------------------------------------------------------------
# retention diagnostics


def retention_for_sample(model: SaliencyModel, sample, start=None):
    """Run one window and return the last fusion block's retention maps."""
    if model.fusion is None or not hasattr(model.fusion, "blocks"):
        raise ValueError("model has no retention maps (fusion is not ravf)")
    w = model.cfg.window
    start = sample.frames.shape[0] - w if start is None else start
    frames, segment = window_inputs(sample, start, w)
    with no_grad():
        out = model(frames, segment)
    return out.retention


def mean_abs_retention(model: SaliencyModel, samples) -> float:
    vals = []
    for sample in samples:
        ret = retention_for_sample(model, sample)
        vals.append(float(np.abs(ret.ret_a.data).mean()))
    return float(np.mean(vals))


def export_retention(model: SaliencyModel, sample, out_dir) -> None:
    """Write raw retention tensors plus per-head grayscale images laid out
    on the deep visual grid (averaged over time and audio tokens)."""
    out_dir = Path(out_dir)
    ret = retention_for_sample(model, sample)
    write_tensor(out_dir / "ret_a.avt", ret.ret_a.data)
    write_tensor(out_dir / "ret_v.avt", ret.ret_v.data)
    w = model.cfg.window
    h16 = -(-sample.frames.shape[2] // 16)
    w16 = -(-sample.frames.shape[3] // 16)
    heads = ret.ret_a.shape[1]
    for h in range(heads):
        grid_a = np.abs(ret.ret_a.data[0, h]).mean(axis=1).reshape(w, h16, w16)
        write_pgm(out_dir / f"ret_a_head{h}.pgm", grid_a.mean(axis=0))
        grid_v = np.abs(ret.ret_v.data[0, h]).mean(axis=0).reshape(w, h16, w16)
        write_pgm(out_dir / f"ret_v_head{h}.pgm", grid_v.mean(axis=0))
