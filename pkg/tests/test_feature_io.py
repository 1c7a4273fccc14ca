import hashlib
import json
import struct

import numpy as np
import pytest

from gaid.feature_io import (
    BadHeaderError,
    BadMagicError,
    ManifestError,
    NonFiniteError,
    PayloadLengthError,
    SynthConfig,
    align_audio,
    decode_tensor,
    encode_tensor,
    gen_synthetic,
    load_manifest,
    load_tensor,
    project,
    sample_frames,
    save_tensor,
    write_manifest,
)
from oracles import affine_loop, block_means


def _raw(tag, dims, payload: bytes) -> bytes:
    return b"GFT1" + struct.pack("<BB", tag, len(dims)) + struct.pack(f"<{len(dims)}I", *dims) + payload


def test_decode_handmade_header():
    buf = _raw(1, [3], struct.pack("<3f", 1, 2, 3))
    x = decode_tensor(buf)
    assert x.dtype == np.float32 and x.tolist() == [1, 2, 3]


def test_truncated_payload():
    buf = _raw(2, [3], struct.pack("<2d", 1, 2))
    with pytest.raises(PayloadLengthError, match="payload length mismatch"):
        decode_tensor(buf)


def test_trailing_bytes_rejected():
    with pytest.raises(PayloadLengthError):
        decode_tensor(encode_tensor(np.ones(2)) + b"\0")


@pytest.mark.parametrize("buf,err", [
    (b"GFT2" + bytes(10), BadMagicError),
    (b"GF", BadMagicError),
    (_raw(3, [1], bytes(4)), BadHeaderError),
    (b"GFT1" + struct.pack("<BB", 1, 5) + bytes(40), BadHeaderError),
    (b"GFT1" + struct.pack("<BB", 1, 0), BadHeaderError),
    (b"GFT1" + struct.pack("<BB", 1, 2) + bytes(4), BadHeaderError),
    (_raw(1, [0], b""), BadHeaderError),
])
def test_header_errors(buf, err):
    with pytest.raises(err):
        decode_tensor(buf)


def test_non_finite_payload():
    with pytest.raises(NonFiniteError):
        decode_tensor(_raw(2, [2], struct.pack("<2d", 1.0, float("nan"))))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip_bit_identical(tmp_path, rng, dtype):
    x = rng.standard_normal((12, 512)).astype(dtype)
    save_tensor(tmp_path / "x.gft", x)
    y = load_tensor(tmp_path / "x.gft")
    assert y.dtype == dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_encode_rejects_bad_inputs():
    with pytest.raises(TypeError):
        encode_tensor(np.ones(3, dtype=np.int32))
    with pytest.raises(BadHeaderError):
        encode_tensor(np.ones((1, 1, 1, 1, 1)))


def test_align_audio_examples(rng):
    raw = rng.standard_normal((7, 3))
    np.testing.assert_array_equal(align_audio(raw, 7), raw)
    np.testing.assert_array_equal(align_audio(np.array([[2.0], [4], [6], [8]]), 2), [[3], [7]])


def test_align_audio_against_block_oracle(rng, f64):
    raw = rng.standard_normal((1500, 8))
    np.testing.assert_allclose(align_audio(raw, 12), block_means(raw.tolist(), 12), atol=1e-12, rtol=0)


def test_align_audio_short_input_repeats_nearest():
    raw = np.array([[1.0], [2.0]])
    assert align_audio(raw, 4).ravel().tolist() == [1, 1, 2, 2]


def test_align_audio_errors():
    with pytest.raises(ValueError):
        align_audio(np.zeros((0, 3)), 2)
    with pytest.raises(ValueError):
        align_audio(np.zeros((4, 3)), 0)


def test_sample_frames():
    x = np.arange(10.0)[:, None]
    assert sample_frames(x, 10) is x
    assert sample_frames(x, 5).ravel().tolist() == [1, 3, 5, 7, 9]
    assert sample_frames(x[:3], 6).ravel().tolist() == [0, 0, 1, 1, 2, 2]


def test_project_examples(rng, f64):
    x = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(project(x, np.eye(3), np.zeros(3)), x)
    assert project(np.array([[3.0, 4.0]]), np.array([[1.0], [1.0]]), np.zeros(1)).tolist() == [[7.0]]
    w, b = rng.standard_normal((3, 5)), rng.standard_normal(5)
    np.testing.assert_allclose(project(x, w, b), affine_loop(x, w, b), atol=1e-12)


def test_synthetic_determinism():
    cfg = SynthConfig(samples=32, frames=4, d_model=8, blank_fraction=0.2, silent_fraction=0.1)
    a, b = gen_synthetic(cfg, 3), gen_synthetic(cfg, 3)
    for x, y in zip(a.arrays(np.float64), b.arrays(np.float64)):
        assert x.tobytes() == y.tobytes()
    c = gen_synthetic(cfg, 4)
    assert not np.array_equal(a.arrays()[2], c.arrays()[2])


def test_synthetic_rho_zero_audio_uncorrelated():
    ds = gen_synthetic(SynthConfig(samples=256, frames=4, d_model=64, rho=0.0), 0)
    _, audio, _, _ = ds.arrays(np.float64)
    z = ds.meta["latent"]
    corr = np.corrcoef(audio.mean(axis=1).ravel(), z.ravel())[0, 1]
    assert abs(corr) < 0.1
    assert not ds.meta["informative"].any()


def test_synthetic_rho_one_noise_free_audio_is_latent():
    ds = gen_synthetic(SynthConfig(samples=16, frames=3, d_model=8, rho=1.0, audio_noise=0.0), 0)
    _, audio, _, _ = ds.arrays(np.float64)
    z = ds.meta["latent"]
    for f in range(3):
        np.testing.assert_array_equal(audio[:, f], z)


def test_synthetic_audio_identifies_its_caption():
    ds = gen_synthetic(SynthConfig(samples=64, frames=4, d_model=64, rho=1.0, text_noise=0.1, audio_noise=0.1), 0)
    _, audio, text, truth = ds.arrays(np.float64)
    a = audio.mean(axis=1)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    t = text / np.linalg.norm(text, axis=1, keepdims=True)
    cos = a @ t.T
    hits = np.mean(np.argmax(cos, axis=1) == np.arange(64))
    assert hits >= 0.95


def test_synthetic_blank_and_silent():
    cfg = SynthConfig(samples=40, frames=5, d_model=8, blank_fraction=1.0, frame_noise=0.0, silent_fraction=1.0)
    ds = gen_synthetic(cfg, 1)
    frames, audio, _, _ = ds.arrays(np.float64)
    assert np.all(frames == 0) and np.all(audio == 0)
    assert not any(v.has_audio for v in ds.videos)


@pytest.mark.parametrize("bad", [dict(rho=1.5), dict(text_noise=-1), dict(samples=0)])
def test_synth_config_validation(bad):
    with pytest.raises(ValueError):
        gen_synthetic(SynthConfig(**bad), 0)


def test_manifest_round_trip(tmp_path):
    ds = gen_synthetic(SynthConfig(samples=6, frames=3, d_model=4, silent_fraction=0.5), 2)
    path = write_manifest(ds, tmp_path, np.float64)
    back = load_manifest(path)
    assert [v.id for v in back.videos] == [v.id for v in ds.videos]
    for x, y in zip(ds.arrays(np.float64), back.arrays(np.float64)):
        np.testing.assert_array_equal(x, y)
    assert [v.has_audio for v in back.videos] == [v.has_audio for v in ds.videos]


def test_manifest_resampling_and_multi_caption(tmp_path, rng):
    save_tensor(tmp_path / "v.gft", rng.standard_normal((10, 4)))
    save_tensor(tmp_path / "a.gft", rng.standard_normal((40, 2)))
    for k in range(3):
        save_tensor(tmp_path / f"t{k}.gft", rng.standard_normal(4))
    items = [{"id": "clip", "text": f"t{k}.gft", "video": "v.gft", "audio": "a.gft", "pair": "clip"} for k in range(3)]
    (tmp_path / "m.json").write_text(json.dumps({"d_model": 4, "frames": 5, "items": items}))
    ds = load_manifest(tmp_path / "m.json")
    frames, audio, text, truth = ds.arrays()
    assert frames.shape == (1, 5, 4) and audio.shape == (1, 5, 2) and text.shape == (3, 4)
    assert truth.tolist() == [0, 0, 0]


@pytest.mark.parametrize("doc", [
    {"frames": 2, "items": []},
    {"d_model": 4, "frames": 2, "items": [{"id": "a"}]},
    {"d_model": 4, "frames": 2, "items": [{"id": "a", "text": "t.gft", "video": "v.gft", "pair": "zzz"}]},
])
def test_manifest_errors(tmp_path, rng, doc):
    save_tensor(tmp_path / "v.gft", rng.standard_normal((3, 4)))
    save_tensor(tmp_path / "t.gft", rng.standard_normal(4))
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")


def test_manifest_unreadable(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")


def test_written_files_hash_stable(tmp_path):
    ds = gen_synthetic(SynthConfig(samples=5, frames=2, d_model=4), 9)

    def digest(root):
        h = hashlib.sha256()
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(root).as_posix().encode() + p.read_bytes())
        return h.hexdigest()

    write_manifest(ds, tmp_path / "a")
    write_manifest(ds, tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
