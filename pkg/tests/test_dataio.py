"""Tensor file format, manifests, and scene generator properties."""

import numpy as np
import pytest

from avsal.dataio import (
    Scene,
    SceneConfig,
    TensorFileError,
    generate_dataset,
    generate_scene,
    list_samples,
    load_sample,
    parse_manifest,
    read_tensor,
    write_manifest,
    write_pgm,
    write_tensor,
)

RNG = np.random.default_rng(3)


def test_roundtrip_bit_identical(tmp_path):
    arr = RNG.normal(size=(3, 4, 5))
    write_tensor(tmp_path / "t.avt", arr)
    back = read_tensor(tmp_path / "t.avt")
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, arr)
    assert back.tobytes() == arr.tobytes()


def test_roundtrip_u8_and_f32(tmp_path):
    u8 = (RNG.integers(0, 255, size=(4, 6))).astype(np.uint8)
    write_tensor(tmp_path / "u.avt", u8)
    np.testing.assert_array_equal(read_tensor(tmp_path / "u.avt"), u8)
    f32 = RNG.normal(size=7).astype(np.float32)
    write_tensor(tmp_path / "f.avt", f32)
    np.testing.assert_array_equal(read_tensor(tmp_path / "f.avt"), f32)


def test_header_is_14_bytes_for_f64_rank2(tmp_path):
    write_tensor(tmp_path / "t.avt", np.zeros((2, 3)))
    blob = (tmp_path / "t.avt").read_bytes()
    assert len(blob) == 4 + 1 + 1 + 8 + 6 * 8
    assert blob[:4] == b"AVT1"
    assert blob[4] == 2 and blob[5] == 2


def test_empty_extent_rejected(tmp_path):
    with pytest.raises(TensorFileError):
        write_tensor(tmp_path / "e.avt", np.zeros((2, 0)))


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "t.avt"
    write_tensor(p, np.zeros(4))
    blob = p.read_bytes()
    (tmp_path / "bad.avt").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(TensorFileError):
        read_tensor(tmp_path / "bad.avt")
    (tmp_path / "short.avt").write_bytes(blob[:-8])
    with pytest.raises(TensorFileError):
        read_tensor(tmp_path / "short.avt")
    (tmp_path / "long.avt").write_bytes(blob + b"\x00")
    with pytest.raises(TensorFileError):
        read_tensor(tmp_path / "long.avt")


def test_manifest_roundtrip(tmp_path):
    write_manifest(tmp_path / "m.txt", {"a": 1, "name": "x y z"})
    text = (tmp_path / "m.txt").read_text()
    assert "a = 1" in text
    parsed = parse_manifest(tmp_path / "m.txt")
    assert parsed == {"a": "1", "name": "x y z"}


def test_manifest_comments_and_errors(tmp_path):
    (tmp_path / "m.txt").write_text("# comment\nkey = value\n\n")
    assert parse_manifest(tmp_path / "m.txt") == {"key": "value"}
    (tmp_path / "bad.txt").write_text("no separator line\n")
    with pytest.raises(ValueError):
        parse_manifest(tmp_path / "bad.txt")


def _cfg(**kw):
    base = dict(height=24, width=32, frames=12, blobs=3, seed=5)
    base.update(kw)
    return SceneConfig(**base)


def test_scene_determinism():
    a = generate_scene(_cfg())
    b = generate_scene(_cfg())
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.audio, b.audio)
    np.testing.assert_array_equal(a.fixations, b.fixations)


def test_scene_density_normalized_and_fixations_binary():
    s = generate_scene(_cfg())
    np.testing.assert_allclose(s.density.sum(axis=(1, 2)), 1.0, atol=1e-9)
    assert s.fixations.dtype == np.uint8
    assert ((s.fixations == 0) | (s.fixations == 1)).all()
    assert s.fixations.sum(axis=(1, 2)).min() >= 1


def test_relevant_mode_envelope_correlation_exactly_one():
    s = generate_scene(_cfg(mode="relevant", frames=20))
    spf = 16000 // 25
    rms = np.sqrt((s.audio.reshape(20, spf) ** 2).mean(axis=1))
    corr = np.corrcoef(rms, s.envelope)[0, 1]
    assert corr > 1.0 - 1e-12


def test_irrelevant_mode_envelope_correlation_near_zero():
    corrs = []
    for seed in range(50):
        s = generate_scene(_cfg(mode="irrelevant", frames=20, seed=seed))
        spf = 16000 // 25
        rms = np.sqrt((s.audio.reshape(20, spf) ** 2).mean(axis=1))
        corrs.append(np.corrcoef(rms, s.envelope)[0, 1])
    assert abs(np.mean(corrs)) < 0.1


def test_relevant_vs_irrelevant_targets():
    rel = generate_scene(_cfg(mode="relevant"))
    irr = generate_scene(_cfg(mode="irrelevant"))
    assert rel.target_blob == rel.sound_blob
    assert irr.label == "irrelevant"


def test_dataset_roundtrip(tmp_path):
    names = generate_dataset(tmp_path / "ds", 4, _cfg(), seed=9,
                             modes=("relevant", "irrelevant"))
    assert names == list_samples(tmp_path / "ds")
    s = load_sample(tmp_path / "ds" / names[1])
    assert s.relevance == "irrelevant"
    assert s.frames.shape == (12, 3, 24, 32)
    assert s.density.shape == (12, 24, 32)
    assert s.sample_rate == 16000


def test_dataset_generation_deterministic(tmp_path):
    generate_dataset(tmp_path / "a", 2, _cfg(), seed=7)
    generate_dataset(tmp_path / "b", 2, _cfg(), seed=7)
    for name in ("vid_0000", "vid_0001"):
        for f in ("frames.avt", "audio.avt", "density.avt", "fixations.avt"):
            a = (tmp_path / "a" / name / f).read_bytes()
            b = (tmp_path / "b" / name / f).read_bytes()
            assert a == b, (name, f)


def test_write_pgm(tmp_path):
    write_pgm(tmp_path / "x.pgm", np.array([[0.0, 1.0], [2.0, 4.0]]))
    blob = (tmp_path / "x.pgm").read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n")
    assert blob[-4:] == bytes([0, 64, 128, 255])
