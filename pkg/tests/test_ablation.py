"""Ablation harness plumbing (cheap configs; directional margins live in
the acceptance suite)."""

import numpy as np
import pytest

from avsal.ablation import (
    ablate_fusion,
    ablate_pairs,
    export_retention,
    mean_abs_retention,
    score_model,
)
from avsal.config import RunConfig
from avsal.dataio import SceneConfig, generate_dataset, load_sample, read_tensor
from avsal.model import build_model

TINY = dict(window=8, channels=(4, 4, 8, 16), d_model=16, heads=2, ravf_blocks=1,
            ffn_dim=16, head_mlp_hidden=8, decoder_channels=(8, 8, 8), head_width=4,
            height=16, width=16, frames_per_video=12, blobs=2,
            epochs_visual=1, epochs_joint=1, steps_per_epoch=2, seed=6)


@pytest.fixture(scope="module")
def mixed_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("abl")
    scene = SceneConfig(height=16, width=16, frames=12, blobs=2)
    generate_dataset(root / "ds", 6, scene, seed=2,
                     modes=("relevant", "irrelevant"))
    return root / "ds"


def test_ablate_fusion_rows_and_csv(mixed_ds, tmp_path):
    cfg = RunConfig(**TINY)
    rows = ablate_fusion(mixed_ds, ["none", "add"], cfg, tmp_path, log=lambda *_: None)
    assert [r.name for r in rows] == ["none", "add"]
    lines = (tmp_path / "fusion_ablation.csv").read_text().splitlines()
    assert lines[0] == "method,SIM,CC,NSS,AUCJ"
    assert len(lines) == 3


def test_ablate_fusion_rejects_unknown_method(mixed_ds, tmp_path):
    with pytest.raises(ValueError):
        ablate_fusion(mixed_ds, ["telepathy"], RunConfig(**TINY), tmp_path,
                      log=lambda *_: None)


def test_ablate_pairs_rows(mixed_ds, tmp_path):
    cfg = RunConfig(**TINY)
    rows = ablate_pairs(mixed_ds, [0, 3], cfg, tmp_path, log=lambda *_: None)
    assert [r.name for r in rows] == ["0", "3"]
    assert (tmp_path / "pairs_ablation.csv").exists()


def test_score_model_returns_finite_metrics(mixed_ds):
    cfg = RunConfig(**TINY)
    model = build_model(cfg)
    samples = [load_sample(mixed_ds / "vid_0004"), load_sample(mixed_ds / "vid_0005")]
    arm = score_model(model, samples)
    for v in (arm.sim, arm.cc, arm.nss, arm.auc_judd):
        assert np.isfinite(v)


def test_zero_audio_projections_export_zero_retention(mixed_ds, tmp_path):
    cfg = RunConfig(**TINY)
    model = build_model(cfg)
    model.fusion.zero_audio_projections()
    sample = load_sample(mixed_ds / "vid_0000")
    export_retention(model, sample, tmp_path / "ret")
    ret_a = read_tensor(tmp_path / "ret" / "ret_a.avt")
    np.testing.assert_array_equal(ret_a, 0.0)
    assert mean_abs_retention(model, [sample]) == 0.0


def test_export_retention_needs_ravf(mixed_ds, tmp_path):
    cfg = RunConfig(**TINY, fusion="add")
    model = build_model(cfg)
    with pytest.raises(ValueError):
        export_retention(model, load_sample(mixed_ds / "vid_0000"), tmp_path)
