"""Whole-model contracts: normalized output, live gradients, variants."""

import numpy as np
import pytest

from avsal.config import RunConfig
from avsal.losses import batch_total_loss
from avsal.model import build_model
from avsal.tensor import Tensor, backward, no_grad

RNG = np.random.default_rng(71)

TINY = dict(window=8, channels=(4, 4, 8, 16), d_model=16, heads=2, ravf_blocks=1,
            ffn_dim=16, head_mlp_hidden=8, decoder_channels=(8, 8, 8), head_width=4,
            height=16, width=16)


def _inputs(b=1, hw=(16, 16)):
    frames = Tensor(RNG.uniform(size=(b, 3, 8) + hw))
    seg = Tensor(RNG.normal(size=8 * 640))
    gt = RNG.uniform(0.01, 1.0, size=(b,) + hw)
    gt /= gt.sum(axis=(1, 2), keepdims=True)
    return frames, seg, gt


def test_output_is_distribution_every_forward():
    model = build_model(RunConfig(**TINY), seed=0)
    for _ in range(3):
        frames, seg, _ = _inputs()
        with no_grad():
            out = model(frames, seg)
        assert np.all(out.maps.data >= 0)
        np.testing.assert_allclose(out.maps.data.sum(axis=(1, 2)), 1.0, atol=1e-9)


def test_loss_gradient_reaches_every_parameter():
    # no dead branches in the full default wiring (joint phase, with audio)
    model = build_model(RunConfig(**TINY), seed=1)
    frames, seg, gt = _inputs()
    out = model(frames, seg)
    loss = batch_total_loss(out.maps, gt)
    backward(loss)
    dead = [name for name, p in model.parameters().items()
            if p.grad is None or not np.any(p.grad)]
    assert not dead, f"dead parameters: {dead}"


def test_visual_phase_leaves_audio_params_untouched():
    model = build_model(RunConfig(**TINY), seed=2)
    frames, _, gt = _inputs()
    out = model(frames, None)  # audio path detached
    loss = batch_total_loss(out.maps, gt)
    backward(loss)
    audio_names = [n for n in model.parameters() if n.startswith(("audio", "fusion"))]
    assert audio_names
    for name in audio_names:
        assert model.parameters()[name].grad is None, name


@pytest.mark.parametrize("method", ["none", "add", "mul", "concat", "bilinear"])
def test_fusion_variants_run_and_train(method):
    model = build_model(RunConfig(**TINY, fusion=method), seed=3)
    frames, seg, gt = _inputs()
    out = model(frames, seg if method != "none" else None)
    loss = batch_total_loss(out.maps, gt)
    backward(loss)
    assert out.retention is None
    np.testing.assert_allclose(out.maps.data.sum(), 1.0, atol=1e-9)
    if method != "none":
        fusion_params = [n for n in model.parameters() if n.startswith("fusion")]
        assert fusion_params
        grads = [model.parameters()[n].grad for n in fusion_params]
        assert any(g is not None and np.any(g) for g in grads)


def test_audio_variants_differ_from_visual_only():
    frames, seg, _ = _inputs()
    base = build_model(RunConfig(**TINY, fusion="none"), seed=4)
    with no_grad():
        visual_map = base(frames, None).maps.data
    for method in ("add", "concat", "bilinear", "ravf"):
        model = build_model(RunConfig(**TINY, fusion=method), seed=4)
        with no_grad():
            fused_map = model(frames, seg).maps.data
        assert fused_map.shape == visual_map.shape


def test_pairs_variants_forward():
    for pairs in (0, 1, 2, 4):
        model = build_model(RunConfig(**TINY, pairs=pairs), seed=5)
        frames, seg, _ = _inputs()
        with no_grad():
            out = model(frames, seg)
        assert sorted(out.fusion.gates) == sorted(range(4 - pairs, 4))[:pairs]
        np.testing.assert_allclose(out.maps.data.sum(), 1.0, atol=1e-9)


def test_batched_forward_matches_singles():
    model = build_model(RunConfig(**TINY), seed=6)
    f1, seg1, _ = _inputs()
    f2, seg2, _ = _inputs()
    both = Tensor(np.concatenate([f1.data, f2.data], axis=0))
    with no_grad():
        a = model(f1, seg1).maps.data
        b = model(f2, seg2).maps.data
        ab = model(both, [seg1, seg2]).maps.data
    np.testing.assert_allclose(ab[0], a[0], atol=1e-12)
    np.testing.assert_allclose(ab[1], b[0], atol=1e-12)