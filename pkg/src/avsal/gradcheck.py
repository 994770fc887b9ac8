"""Finite-difference verification suite for every differentiable op and
for the assembled model.

Each op is checked at five random points with central differences
(eps 1e-5, 64-bit); the model check samples coordinates from every
parameter tensor and from the input frames, through the full forward pass
and the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .config import RunConfig
from .losses import total_loss
from .model import build_model
from .ops import Conv3dParams, affine, aspp, conv3d, global_avg_pool, lip_pool, resample_trilinear
from .tensor import Tensor, grad_check, tensor

TOLERANCE = 1e-4
EPS = 1e-5
POINTS = 5


@dataclass
class CheckResult:
    name: str
    max_error: float

    @property
    def ok(self) -> bool:
        return self.max_error < TOLERANCE


def _weighted(rng, shape):
    w = tensor(rng.normal(size=shape))
    return lambda t: (t * w).sum()


def _op_cases(rng):
    """name -> (point factory, scalar function factory)."""
    shape = (3, 5)

    def c(sh=shape):
        return tensor(rng.normal(size=sh))

    cases = {}
    cases["add"] = lambda: (c(), (lambda b: (lambda x: (x + b).sum()))(c()))
    cases["sub"] = lambda: (c(), (lambda b: (lambda x: (b - x * x).sum()))(c()))
    cases["mul"] = lambda: (c(), (lambda b: (lambda x: (x * x * b).sum()))(c()))
    cases["div"] = lambda: (c(), (lambda b: (lambda x: (b / (x * x + tensor(np.full(shape, 1.5)))).sum()))(c()))
    cases["exp"] = lambda: (c(), (lambda b: (lambda x: (tt.exp(x) * b).sum()))(c()))
    cases["log"] = lambda: (c(), lambda x: tt.log(x * x + tensor(np.full(shape, 0.5))).sum())
    cases["sqrt"] = lambda: (c(), lambda x: tt.sqrt(x * x + tensor(np.full(shape, 0.5))).sum())
    cases["sigmoid"] = lambda: (c(), (lambda b: (lambda x: (tt.sigmoid(x) * b).sum()))(c()))
    cases["gelu"] = lambda: (c(), (lambda b: (lambda x: (tt.gelu(x) * b).sum()))(c()))
    cases["min"] = lambda: (c(), (lambda b, w: (lambda x: (tt.minimum(x, b) * w).sum()))(c(), c()))
    cases["softmax"] = lambda: (c(), (lambda b: (lambda x: (tt.softmax(x, 1) * b).sum()))(c()))
    cases["matmul"] = lambda: (
        c((3, 4)),
        (lambda b, w: (lambda x: (tt.matmul(x, b) * w).sum()))(c((4, 2)), c((3, 2))),
    )
    cases["layer_norm"] = lambda: (
        c(),
        (lambda g, be, w: (lambda x: (tt.layer_norm(x, g, be) * w).sum()))(
            c((5,)), c((5,)), c()
        ),
    )

    def conv_case():
        x = tensor(rng.normal(size=(1, 2, 3, 4, 4)))
        k0 = tensor(rng.normal(size=(3, 2, 2, 3, 3)))
        b0 = tensor(rng.normal(size=3))
        w = None

        def f(k):
            p = Conv3dParams(k, b0, (1, 2, 1), (1, 1, 1), (1, 1, 2))
            out = conv3d(x, p)
            nonlocal w
            if w is None:
                w = tensor(rng.normal(size=out.shape))
            return (out * w).sum()

        return k0, f

    cases["conv3d"] = conv_case

    def resample_case():
        x = tensor(rng.normal(size=(1, 2, 2, 3, 3)))
        w = tensor(rng.normal(size=(1, 2, 3, 6, 2)))
        return x, lambda t: (resample_trilinear(t, (3, 6, 2)) * w).sum()

    cases["resample_trilinear"] = resample_case

    def gap_case():
        x = tensor(rng.normal(size=(1, 2, 2, 3, 3)))
        w = tensor(rng.normal(size=(1, 2, 1, 1, 1)))
        return x, lambda t: (global_avg_pool(t) * w).sum()

    cases["global_avg_pool"] = gap_case

    def lip_case():
        x = tensor(rng.normal(size=(1, 2, 2, 4, 4)))
        k = tensor(rng.normal(size=(2, 2, 1, 1, 1)))
        return x, lambda t: lip_pool(t, Conv3dParams(k), (1, 2, 2)).sum()

    cases["lip_pool"] = lip_case

    def aspp_case():
        x0 = tensor(rng.normal(size=(1, 2, 2, 4, 4)))
        k1 = rng.normal(size=(2, 2, 1, 3, 3))
        mix = Conv3dParams(tensor(rng.normal(size=(2, 2, 1, 1, 1))))
        w = tensor(rng.normal(size=x0.shape))

        def f(k):
            branches = [
                Conv3dParams(k, None, padding=(0, 1, 1)),
                Conv3dParams(tensor(k1), None, padding=(0, 2, 2), dilation=(1, 2, 2)),
            ]
            return (aspp(x0, branches, mix) * w).sum()

        return tensor(rng.normal(size=(2, 2, 1, 3, 3))), f

    cases["aspp"] = aspp_case

    def affine_case():
        x = tensor(rng.normal(size=(2, 4, 3)))
        b = tensor(rng.normal(size=2))
        w = tensor(rng.normal(size=(2, 4, 2)))
        return tensor(rng.normal(size=(3, 2))), lambda W: (affine(x, W, b) * w).sum()

    cases["affine"] = affine_case

    def kl_case():
        raw = np.abs(rng.normal(size=(4, 5))) + 0.05
        g = np.abs(rng.normal(size=(4, 5))) + 0.05
        g /= g.sum()

        def f(x):
            p = x * x
            p = p / p.sum()
            return total_loss(p, Tensor(g))

        return tensor(raw), f

    cases["total_loss"] = kl_case
    return cases


def run_op_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng)
    results = []
    for name, factory in cases.items():
        worst = 0.0
        for _ in range(POINTS):
            point, fn = factory()
            worst = max(worst, grad_check(fn, point, eps=EPS))
        results.append(CheckResult(name, worst))
    return results


def run_model_check(seed: int = 0, coords_per_param: int = 2) -> CheckResult:
    """End-to-end: loss of the desk model on an 8x16x24 input, finite
    differences on sampled coordinates of every parameter and the input.

    One backward pass supplies all analytic gradients; each sampled
    coordinate is then probed by perturbing the parameter data in place.
    """
    cfg = RunConfig(window=8)
    model = build_model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = Tensor(rng.normal(size=(1, 3, 8, 16, 24)) * 0.5, requires_grad=True)
    segment0 = rng.normal(size=8 * 640)
    gt = np.abs(rng.normal(size=(16, 24))) + 0.05
    gt /= gt.sum()

    def loss_value() -> float:
        with tt.no_grad():
            out = model(Tensor(frames.data), Tensor(segment0))
            b, h, w = out.maps.shape
            return total_loss(out.maps.reshape(h, w), Tensor(gt)).item()

    out = model(frames, Tensor(segment0))
    _, h, w = out.maps.shape
    loss = total_loss(out.maps.reshape(h, w), Tensor(gt))
    tt.backward(loss)

    targets = dict(model.parameters())
    targets["input.frames"] = frames
    worst = 0.0
    for name, p in targets.items():
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        n = min(coords_per_param, p.size)
        coords = rng.choice(p.size, size=n, replace=False)
        flat = p.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + EPS
            hi = loss_value()
            flat[i] = orig - EPS
            lo = loss_value()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * EPS)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return CheckResult("model_end_to_end", worst)


def run_all(seed: int = 0, log=print) -> bool:
    results = run_op_suite(seed)
    results.append(run_model_check(seed))
    ok = True
    for r in results:
        status = "ok" if r.ok else "FAIL"
        log(f"{r.name:24s} max rel err {r.max_error:.3e}  [{status}]")
        ok = ok and r.ok
    return ok
