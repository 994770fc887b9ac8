"""Saliency losses over normalized maps.

All three terms treat the prediction P and ground truth G as discrete
distributions over pixels: KL for global distribution match, Pearson
correlation for linear agreement, histogram intersection for local
overlap.  The combined objective is KL + a1*CC + a2*Sim with the
correlation and similarity weights defaulting to -0.1 each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

KL_EPS = 1e-7
# loose enough that finite-difference probes (eps 1e-5) stay acceptable
NORM_TOL = 1e-4


@dataclass
class LossWeights:
    alpha1: float = -0.1
    alpha2: float = -0.1


def _as_map(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_normalized(t: Tensor, name: str) -> None:
    s = float(t.data.sum())
    if abs(s - 1.0) > NORM_TOL:
        raise ValueError(f"{name} is not normalized (sum={s:.6g})")
    if np.any(t.data < 0.0):
        raise ValueError(f"{name} has negative entries")


def kl_div(p, g, eps: float = KL_EPS) -> Tensor:
    """sum_i G_i * log((eps + G_i) / (eps + P_i)); zero when P equals G."""
    p, g = _as_map(p), _as_map(g)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if np.any(p.data < 0.0) or np.any(g.data < 0.0):
        raise ValueError("KL inputs must be non-negative")
    e = Tensor(eps)
    g_const = g.detach()
    return (g_const * (tt.log(g_const + e) - tt.log(p + e))).sum()


def cc(p, g) -> Tensor:
    """Pearson correlation between the two maps; undefined for constants."""
    p, g = _as_map(p), _as_map(g)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if np.ptp(p.data) == 0.0 or np.ptp(g.data) == 0.0:
        raise ValueError("cc undefined: constant input map")
    pc = p - p.mean()
    gc = g - g.mean()
    num = (pc * gc).sum()
    den = tt.sqrt((pc * pc).sum()) * tt.sqrt((gc * gc).sum())
    return num / den


def sim(p, g) -> Tensor:
    """Histogram intersection sum_i min(P_i, G_i) of two normalized maps."""
    p, g = _as_map(p), _as_map(g)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    _check_normalized(p, "prediction")
    _check_normalized(g, "ground truth")
    return tt.minimum(p, g).sum()


def total_loss(p, g, w: LossWeights = LossWeights()) -> Tensor:
    """KL + alpha1 * CC + alpha2 * Sim on a single map pair."""
    out = kl_div(p, g)
    if w.alpha1 != 0.0:
        out = out + Tensor(w.alpha1) * cc(p, g)
    if w.alpha2 != 0.0:
        out = out + Tensor(w.alpha2) * sim(p, g)
    return out


def batch_total_loss(p: Tensor, g, w: LossWeights = LossWeights()) -> Tensor:
    """Per-map losses averaged over the leading batch axis."""
    g = _as_map(g)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if p.ndim == 2:
        return total_loss(p, g, w)
    losses = None
    for b in range(p.shape[0]):
        one = total_loss(_row(p, b), Tensor(g.data[b]), w)
        losses = one if losses is None else losses + one
    return losses * Tensor(1.0 / p.shape[0])


def _row(p: Tensor, b: int) -> Tensor:
    def grad_fn(gr):
        full = np.zeros_like(p.data)
        full[b] = gr
        tt._accum(p, full)

    return tt._make_node(p.data[b].copy(), (p,), grad_fn)
