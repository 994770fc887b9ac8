"""MS residual guarantees and MRG gate fixtures/oracles."""

import numpy as np
import pytest

from avsal.synergy import MrgGate, MsBlock, SynergyStage
from avsal.tensor import grad_check, tensor
from avsal.visual import FeaturePyramid

RNG = np.random.default_rng(55)


def _triplet(ch=(3, 4, 5), hw=(8, 8)):
    h, w = hw
    xh = tensor(RNG.normal(size=(1, ch[0], 2, h, w)))
    xm = tensor(RNG.normal(size=(1, ch[1], 2, -(-h // 2), -(-w // 2))))
    xl = tensor(RNG.normal(size=(1, ch[2], 2, -(-h // 4), -(-w // 4))))
    return xh, xm, xl


def test_ms_zero_weights_is_identity():
    xh, xm, xl = _triplet()
    block = MsBlock(3, 4, 5, np.random.default_rng(1))
    block.zero_branches()
    out = block(xh, xm, xl)
    np.testing.assert_array_equal(out.data, xm.data)


def test_ms_output_shape_matches_middle():
    rng = np.random.default_rng(2)
    for hw in [(8, 8), (6, 10), (5, 7)]:
        xh, xm, xl = _triplet(hw=hw)
        out = MsBlock(3, 4, 5, rng)(xh, xm, xl)
        assert out.shape == xm.shape


def test_ms_boundary_variants():
    rng = np.random.default_rng(3)
    xh, xm, xl = _triplet()
    no_high = MsBlock(None, 4, 5, rng)
    assert no_high(None, xm, xl).shape == xm.shape
    no_low = MsBlock(3, 4, None, rng)
    assert no_low(xh, xm, None).shape == xm.shape
    with pytest.raises(ValueError):
        no_high(xh, xm, xl)


def test_ms_rejects_non_adjacent_scales():
    rng = np.random.default_rng(4)
    block = MsBlock(3, 4, 5, rng)
    xh = tensor(RNG.normal(size=(1, 3, 2, 8, 8)))
    xm = tensor(RNG.normal(size=(1, 4, 2, 8, 8)))  # same scale: not adjacent
    xl = tensor(RNG.normal(size=(1, 5, 2, 2, 2)))
    with pytest.raises(ValueError):
        block(xh, xm, xl)


def test_ms_grad_check_three_scale_graph():
    rng = np.random.default_rng(5)
    block = MsBlock(2, 2, 2, rng)
    xh = tensor(RNG.normal(size=(1, 2, 1, 4, 4)))
    xl = tensor(RNG.normal(size=(1, 2, 1, 1, 1)))
    xm0 = RNG.normal(size=(1, 2, 1, 2, 2))
    w = tensor(RNG.normal(size=(1, 2, 1, 2, 2)))
    err = grad_check(lambda x: (block(xh, x, xl) * w).sum(), tensor(xm0))
    assert err < 1e-4
    k = block.m_from_l.conv.kernel

    def wrt_kernel(kk):
        block.m_from_l.conv.kernel = kk
        try:
            return (block(xh, tensor(xm0), xl) * w).sum()
        finally:
            block.m_from_l.conv.kernel = k

    assert grad_check(wrt_kernel, tensor(k.data)) < 1e-4


def test_mrg_gate_sigma_zero_fixture():
    rng = np.random.default_rng(6)
    gate = MrgGate(4, 3, 5, rng)
    gate.gate_conv.kernel.data[:] = 0.0
    gate.gate_conv.bias.data[:] = 0.0
    f_prev = tensor(RNG.normal(size=(1, 4, 2, 2, 2)))
    x_vis = tensor(RNG.normal(size=(1, 3, 2, 4, 4)))
    out, g = gate(f_prev, x_vis)
    np.testing.assert_allclose(g.data, 0.5, atol=0)
    from avsal.ops import conv3d, resample_trilinear

    f_up = resample_trilinear(f_prev, (2, 4, 4))
    want = conv3d(0.5 * f_up, gate.post.params)
    np.testing.assert_allclose(out.data, want.data, atol=1e-12)


def test_mrg_gate_strictly_inside_unit_interval():
    rng = np.random.default_rng(7)
    gate = MrgGate(4, 3, 5, rng)
    for _ in range(5):
        f_prev = tensor(RNG.normal(size=(1, 4, 2, 2, 2)) * 10)
        x_vis = tensor(RNG.normal(size=(1, 3, 2, 4, 4)) * 10)
        _, g = gate(f_prev, x_vis)
        assert np.all(g.data > 0.0) and np.all(g.data < 1.0)
        assert g.shape == (1, 4, 1, 1, 1)


def test_mrg_gate_matches_sigmoid_mean_oracle():
    rng = np.random.default_rng(8)
    gate = MrgGate(2, 2, 3, rng)
    f_prev = RNG.normal(size=(1, 2, 2, 2, 2))
    x_vis = RNG.normal(size=(1, 2, 2, 4, 4))
    _, g = gate(tensor(f_prev), tensor(x_vis))
    # oracle: explicit upsample, concat, 1x1x1 conv, sigmoid, plain mean
    from avsal.ops import resample_trilinear

    f_up = resample_trilinear(tensor(f_prev), (2, 4, 4)).data
    z = np.concatenate([f_up, x_vis], axis=1)
    k = gate.gate_conv.kernel.data[:, :, 0, 0, 0]
    b = gate.gate_conv.bias.data
    pre = np.einsum("bcthw,oc->bothw", z, k) + b.reshape(1, -1, 1, 1, 1)
    want = (1.0 / (1.0 + np.exp(-pre))).mean(axis=(2, 3, 4))
    np.testing.assert_allclose(g.data.reshape(1, -1), want, atol=1e-12)


def _pyramid(c=(8, 5, 4, 3), hw=(16, 16)):
    h, w = hw
    mk = lambda ch, f: tensor(RNG.normal(size=(1, ch, 2, h // f, w // f)))
    return FeaturePyramid(x0=mk(c[0], 8), x1=mk(c[1], 4), x2=mk(c[2], 2), x3=mk(c[3], 1))


def test_stage_default_three_gates_and_extents():
    rng = np.random.default_rng(9)
    pyr = _pyramid()
    stage = SynergyStage((8, 5, 4, 3), d_fused=6, rng=rng, pairs=3)
    f_av0 = tensor(RNG.normal(size=(1, 6, 2, 2, 2)))
    state = stage(pyr, f_av0)
    assert sorted(state.gates) == [1, 2, 3]
    for lvl, want in zip((1, 2, 3), (pyr.x1, pyr.x2, pyr.x3)):
        assert state.features[lvl].shape[2:] == want.shape[2:]
    # gated laterals carry the level widths
    assert state.features[1].shape[1] == 5
    assert state.features[3].shape[1] == 3


def test_stage_pairs_zero_is_passthrough():
    rng = np.random.default_rng(10)
    pyr = _pyramid()
    stage = SynergyStage((8, 5, 4, 3), d_fused=6, rng=rng, pairs=0)
    f_av0 = tensor(RNG.normal(size=(1, 6, 2, 2, 2)))
    state = stage(pyr, f_av0)
    assert state.gates == {}
    enhanced = stage.enhance(pyr)
    for got, want in zip(enhanced, pyr.as_list()):
        assert got is want
    # laterals are plain upsamples, fused width everywhere
    for lvl in (1, 2, 3):
        assert state.features[lvl].shape[1] == 6


def test_stage_pairs_four_adds_self_gate():
    rng = np.random.default_rng(11)
    pyr = _pyramid()
    stage = SynergyStage((8, 5, 4, 3), d_fused=6, rng=rng, pairs=4)
    f_av0 = tensor(RNG.normal(size=(1, 6, 2, 2, 2)))
    state = stage(pyr, f_av0)
    assert sorted(state.gates) == [0, 1, 2, 3]
    assert state.features[0].shape == f_av0.shape


def test_stage_mrg_off_keeps_ms():
    rng = np.random.default_rng(12)
    pyr = _pyramid()
    stage = SynergyStage((8, 5, 4, 3), d_fused=6, rng=rng, pairs=3, use_mrg=False)
    state = stage(pyr, tensor(RNG.normal(size=(1, 6, 2, 2, 2))))
    assert state.gates == {}
    enhanced = stage.enhance(pyr)
    assert enhanced[1] is not pyr.x1  # MS still active
