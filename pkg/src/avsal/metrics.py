"""Evaluation metrics for saliency maps against eye-fixation data.

NSS standardizes the map (population std) and averages it at fixated
pixels.  AUC-Judd treats the map as a binary classifier for fixated
pixels, thresholding at each distinct fixated value with ties counted as
positives, and integrating the ROC curve with trapezoids between the
(0,0) and (1,1) endpoints.  SIM and CC are shared with the training
losses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .dataio import list_samples, load_sample, read_tensor


class MetricError(ValueError):
    pass


def sim_score(pred: np.ndarray, gt: np.ndarray) -> float:
    return losses.sim(pred, gt).item()


def cc_score(pred: np.ndarray, gt: np.ndarray) -> float:
    return losses.cc(pred, gt).item()


def nss(saliency: np.ndarray, fixations: np.ndarray) -> float:
    """Mean standardized saliency at fixated pixels (population std)."""
    s = np.asarray(saliency, dtype=np.float64)
    f = np.asarray(fixations) > 0
    if s.shape != f.shape:
        raise MetricError(f"shape mismatch {s.shape} vs {f.shape}")
    if not f.any():
        raise MetricError("no fixations")
    std = s.std()  # population convention
    if std == 0.0:
        raise MetricError("constant saliency map: NSS undefined")
    return float(((s - s.mean()) / std)[f].mean())


def auc_judd(saliency: np.ndarray, fixations: np.ndarray) -> float:
    """ROC area with thresholds at the distinct fixated saliency values."""
    s = np.asarray(saliency, dtype=np.float64).reshape(-1)
    f = np.asarray(fixations).reshape(-1) > 0
    if s.size != f.size:
        raise MetricError("extent mismatch")
    n_fix = int(f.sum())
    n_neg = int(f.size - n_fix)
    if n_fix == 0 or n_neg == 0:
        raise MetricError("need both fixated and non-fixated pixels")
    pos, neg = s[f], s[~f]
    thresholds = np.unique(pos)[::-1]  # descending
    tpr = [0.0]
    fpr = [0.0]
    for th in thresholds:
        tpr.append(float((pos >= th).sum()) / n_fix)
        fpr.append(float((neg >= th).sum()) / n_neg)
    tpr.append(1.0)
    fpr.append(1.0)
    # sequential trapezoid accumulation, matching the brute-force sweep
    # bit for bit
    area = 0.0
    for i in range(len(tpr) - 1):
        area += (fpr[i + 1] - fpr[i]) * (tpr[i] + tpr[i + 1]) / 2.0
    return area


@dataclass
class VideoResult:
    video: str
    frame_count: int
    sim: float
    cc: float | None   # None when every frame had a constant map
    nss: float | None  # likewise undefined on constant maps
    auc_judd: float
    cc_skipped: int = 0  # frames where CC/NSS were undefined


@dataclass
class RunResult:
    videos: list = field(default_factory=list)

    def means(self) -> dict:
        out = {}
        for key in ("sim", "cc", "nss", "auc_judd"):
            vals = [getattr(v, key) for v in self.videos if getattr(v, key) is not None]
            out[key] = float(np.mean(vals)) if vals else float("nan")
        return out


def evaluate_frames(pred: np.ndarray, density: np.ndarray,
                    fixations: np.ndarray) -> VideoResult:
    """Per-frame metrics averaged over one video's frames."""
    if pred.shape != density.shape:
        raise MetricError(f"prediction {pred.shape} vs density {density.shape}")
    if pred.shape != fixations.shape:
        raise MetricError("fixation extents disagree")
    sims, ccs, nsss, aucs = [], [], [], []
    skipped = 0
    for t in range(pred.shape[0]):
        p = pred[t] / pred[t].sum()
        g = density[t] / density[t].sum()
        sims.append(sim_score(p, g))
        if np.ptp(p) == 0.0 or np.ptp(g) == 0.0:
            skipped += 1  # CC/NSS undefined on a constant map; flagged, not NaN
        else:
            ccs.append(cc_score(p, g))
            nsss.append(nss(p, fixations[t]))
        aucs.append(auc_judd(p, fixations[t]))
    return VideoResult(
        video="", frame_count=pred.shape[0],
        sim=float(np.mean(sims)),
        cc=float(np.mean(ccs)) if ccs else None,
        nss=float(np.mean(nsss)) if nsss else None,
        auc_judd=float(np.mean(aucs)),
        cc_skipped=skipped,
    )


def evaluate_run(pred_dir, dataset_dir, csv_path=None) -> RunResult:
    """Compare <pred_dir>/<video>.avt maps against dataset ground truth.

    Deterministic and order-independent: videos are processed in sorted
    name order and each is scored independently.
    """
    pred_dir = Path(pred_dir)
    result = RunResult()
    for name in sorted(list_samples(dataset_dir)):
        pred_file = pred_dir / f"{name}.avt"
        if not pred_file.exists():
            raise MetricError(f"missing predictions for {name}")
        pred = read_tensor(pred_file)
        sample = load_sample(Path(dataset_dir) / name)
        if pred.shape[0] != sample.density.shape[0]:
            raise MetricError(f"{name}: predicted {pred.shape[0]} frames, "
                              f"expected {sample.density.shape[0]}")
        vr = evaluate_frames(pred, sample.density, sample.fixations)
        vr.video = name
        result.videos.append(vr)
    if csv_path is not None:
        write_metrics_csv(csv_path, result)
    return result


def write_metrics_csv(path, result: RunResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["video", "frame_count", "SIM", "CC", "NSS", "AUCJ"])
        for v in result.videos:
            cc_cell = "" if v.cc is None else f"{v.cc:.6f}"
            nss_cell = "" if v.nss is None else f"{v.nss:.6f}"
            wr.writerow([v.video, v.frame_count, f"{v.sim:.6f}", cc_cell,
                         nss_cell, f"{v.auc_judd:.6f}"])
        m = result.means()
        wr.writerow(["mean", sum(v.frame_count for v in result.videos),
                     f"{m['sim']:.6f}", f"{m['cc']:.6f}",
                     f"{m['nss']:.6f}", f"{m['auc_judd']:.6f}"])
