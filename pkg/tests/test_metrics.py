"""Metric fixtures, brute-force oracles, and run aggregation."""

import numpy as np
import pytest

from avsal.dataio import SceneConfig, generate_dataset, load_sample, write_tensor
from avsal.metrics import MetricError, auc_judd, evaluate_run, nss, sim_score

RNG = np.random.default_rng(23)


def test_nss_fixture_hand_computed():
    s = np.array([[1.0, 2.0], [3.0, 4.0]])
    fix = np.array([[0, 0], [0, 1]])
    want = (4.0 - 2.5) / np.sqrt(1.25)  # population std
    assert abs(nss(s, fix) - want) < 1e-12


def test_nss_zero_at_mean_valued_pixel():
    s = np.array([[1.0, 2.0, 3.0]])  # mean 2
    fix = np.array([[0, 1, 0]])
    assert abs(nss(s, fix)) < 1e-12


def test_nss_affine_invariance():
    s = RNG.normal(size=(8, 8))
    fix = (RNG.uniform(size=(8, 8)) < 0.2).astype(int)
    fix.reshape(-1)[0] = 1
    base = nss(s, fix)
    assert abs(nss(3.0 * s + 7.0, fix) - base) < 1e-10


def test_nss_errors():
    with pytest.raises(MetricError):
        nss(np.ones((3, 3)), np.eye(3))
    with pytest.raises(MetricError):
        nss(RNG.normal(size=(3, 3)), np.zeros((3, 3)))


def auc_judd_oracle(s, fix):
    """Exhaustive threshold sweep, recomputing both rates from scratch."""
    s = s.reshape(-1)
    f = fix.reshape(-1) > 0
    points = [(0.0, 0.0)]
    for th in sorted(set(s[f]), reverse=True):
        tpr = (s[f] >= th).mean()
        fpr = (s[~f] >= th).mean()
        points.append((fpr, tpr))
    points.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def test_auc_perfect_separation():
    s = np.arange(16, dtype=float).reshape(4, 4)
    fix = np.zeros((4, 4), dtype=int)
    fix[3, 2] = fix[3, 3] = 1  # the two strictly largest values
    assert auc_judd(s, fix) == 1.0


def test_auc_matches_sweep_oracle_exactly():
    for trial in range(25):
        s = RNG.normal(size=(9, 7))
        if trial % 3 == 0:
            s = np.round(s, 1)  # force ties
        fix = (RNG.uniform(size=(9, 7)) < 0.25).astype(int)
        if fix.sum() == 0:
            fix.reshape(-1)[3] = 1
        if fix.sum() == fix.size:
            fix.reshape(-1)[4] = 0
        got = auc_judd(s, fix)
        want = auc_judd_oracle(s, fix)
        assert got == pytest.approx(want, abs=1e-12)


def test_auc_random_maps_near_half():
    rng = np.random.default_rng(99)
    scores = []
    for _ in range(100):
        s = rng.normal(size=(64, 64))
        fix = np.zeros(64 * 64, dtype=int)
        fix[rng.choice(64 * 64, size=100, replace=False)] = 1
        scores.append(auc_judd(s, fix.reshape(64, 64)))
    assert 0.48 <= np.mean(scores) <= 0.52


def test_auc_invariant_under_monotone_transform():
    s = RNG.normal(size=(8, 8))
    fix = (RNG.uniform(size=(8, 8)) < 0.2).astype(int)
    fix.reshape(-1)[5] = 1
    assert abs(auc_judd(s, fix) - auc_judd(np.exp(s), fix)) < 1e-12


def test_auc_degenerate_sets():
    with pytest.raises(MetricError):
        auc_judd(RNG.normal(size=(2, 2)), np.zeros((2, 2)))
    with pytest.raises(MetricError):
        auc_judd(RNG.normal(size=(2, 2)), np.ones((2, 2)))


def _dataset(tmp_path, n=3):
    cfg = SceneConfig(height=16, width=16, frames=5, blobs=2, seed=1)
    generate_dataset(tmp_path / "ds", n, cfg, seed=4,
                     modes=("relevant", "irrelevant"))
    return tmp_path / "ds"


def test_evaluate_run_perfect_predictions(tmp_path):
    # predictions equal to ground truth, fixations at the density maxima
    ds = _dataset(tmp_path)
    pred_dir = tmp_path / "pred"
    for name in ("vid_0000", "vid_0001", "vid_0002"):
        sample = load_sample(ds / name)
        write_tensor(pred_dir / f"{name}.avt", sample.density)
        at_max = np.zeros_like(sample.fixations)
        for t in range(sample.density.shape[0]):
            flat = sample.density[t].reshape(-1)
            at_max[t].reshape(-1)[np.argmax(flat)] = 1
        write_tensor(ds / name / "fixations.avt", at_max)
    res = evaluate_run(pred_dir, ds, csv_path=tmp_path / "m.csv")
    means = res.means()
    assert abs(means["sim"] - 1.0) < 1e-9
    assert abs(means["cc"] - 1.0) < 1e-9
    assert abs(means["auc_judd"] - 1.0) < 1e-12
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == "video,frame_count,SIM,CC,NSS,AUCJ"


def test_evaluate_run_uniform_prediction_flags_cc(tmp_path):
    ds = _dataset(tmp_path, n=1)
    sample = load_sample(ds / "vid_0000")
    uniform = np.full_like(sample.density, 1.0 / (16 * 16))
    write_tensor(tmp_path / "pred" / "vid_0000.avt", uniform)
    res = evaluate_run(tmp_path / "pred", ds)
    v = res.videos[0]
    assert v.cc is None and v.cc_skipped == 5
    # closed form: SIM = sum min(1/N, G_i)
    want = float(np.minimum(uniform[0], sample.density[0] / sample.density[0].sum()).sum())
    got_first = sim_score(uniform[0], sample.density[0] / sample.density[0].sum())
    assert abs(got_first - want) < 1e-12


def test_evaluate_run_order_independent(tmp_path):
    ds = _dataset(tmp_path)
    pred_dir = tmp_path / "pred"
    rng = np.random.default_rng(0)
    for name in ("vid_0000", "vid_0001", "vid_0002"):
        m = rng.uniform(0.1, 1.0, size=(5, 16, 16))
        write_tensor(pred_dir / f"{name}.avt", m / m.sum(axis=(1, 2), keepdims=True))
    a = evaluate_run(pred_dir, ds).means()
    b = evaluate_run(pred_dir, ds).means()
    assert a == b


def test_evaluate_run_missing_video(tmp_path):
    ds = _dataset(tmp_path, n=2)
    (tmp_path / "pred").mkdir()
    sample = load_sample(ds / "vid_0000")
    write_tensor(tmp_path / "pred" / "vid_0000.avt", sample.density)
    with pytest.raises(MetricError):
        evaluate_run(tmp_path / "pred", ds)
