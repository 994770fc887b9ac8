"""Visual encoder pyramid contracts."""

import numpy as np

from avsal.tensor import grad_check, no_grad, tensor
from avsal.visual import VisualEncoder

RNG = np.random.default_rng(4)


def _encoder(channels=(4, 4, 8, 8)):
    return VisualEncoder(np.random.default_rng(2), channels=channels)


def test_pyramid_shape_contract():
    enc = VisualEncoder(np.random.default_rng(2), channels=(16, 24, 32, 96))
    with no_grad():
        pyr = enc(tensor(RNG.normal(size=(1, 3, 8, 64, 96))))
    c3, c2, c1, c0 = 16, 24, 32, 96
    assert pyr.x3.shape == (1, c3, 8, 32, 48)
    assert pyr.x2.shape == (1, c2, 8, 16, 24)
    assert pyr.x1.shape == (1, c1, 8, 8, 12)
    assert pyr.x0.shape == (1, c0, 8, 4, 6)


def test_pyramid_rounds_odd_extents_up():
    enc = _encoder()
    with no_grad():
        pyr = enc(tensor(RNG.normal(size=(1, 3, 4, 16, 24))))
    assert pyr.x1.shape[3:] == (2, 3)
    assert pyr.x0.shape[3:] == (1, 2)


def test_zero_input_zero_biases_zero_pyramid():
    enc = _encoder()
    for _, p in enc.parameters().items():
        pass
    for block in enc.blocks:
        block.spatial.bias.data[:] = 0
        block.temporal.bias.data[:] = 0
        block.refine.mix.bias.data[:] = 0
        for br in block.refine.branches:
            br.bias.data[:] = 0
        block.pool.logit_conv.bias.data[:] = 0
    with no_grad():
        pyr = enc(tensor(np.zeros((1, 3, 4, 16, 16))))
    for level in pyr.as_list():
        np.testing.assert_allclose(level.data, 0.0, atol=1e-15)


def test_every_frame_reaches_x0():
    # occlusion probe: perturbing any single frame must change X0
    enc = _encoder()
    frames = RNG.normal(size=(1, 3, 6, 16, 16))
    with no_grad():
        base = enc(tensor(frames)).x0.data
    for t in range(6):
        bumped = frames.copy()
        bumped[:, :, t] += 0.5
        with no_grad():
            got = enc(tensor(bumped)).x0.data
        assert np.abs(got - base).max() > 1e-9, f"frame {t} invisible at X0"


def test_block_grad_check():
    enc = _encoder(channels=(4, 4, 4, 4))
    block = enc.blocks[0]
    x0 = RNG.normal(size=(1, 3, 3, 4, 4))
    k = block.spatial.kernel

    def f(kk):
        block.spatial.kernel = kk
        try:
            return block(tensor(x0)).sum()
        finally:
            block.spatial.kernel = k

    assert grad_check(f, tensor(k.data)) < 1e-4
    assert grad_check(lambda x: block(x).sum(), tensor(x0)) < 1e-4
