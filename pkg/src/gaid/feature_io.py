"""Feature ingestion: GFT tensor files, manifests, audio alignment and the
synthetic dataset generator."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc

MAGIC = b"GFT1"
_TAG_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class GFTError(ValueError):
    """Base class for malformed tensor files."""


class BadMagicError(GFTError):
    pass


class BadHeaderError(GFTError):
    pass


class PayloadLengthError(GFTError):
    pass


class NonFiniteError(GFTError):
    pass


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# GFT format


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    tag = _DTYPE_TO_TAG.get(x.dtype)
    if tag is None:
        raise TypeError(f"unsupported dtype {x.dtype}; GFT stores f32 or f64")
    if not 1 <= x.ndim <= 4:
        raise BadHeaderError(f"rank {x.ndim} not in 1..4")
    header = MAGIC + struct.pack("<BB", tag, x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x, dtype=_TAG_TO_DTYPE[tag]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise BadMagicError("bad magic: expected b'GFT1'")
    tag, rank = struct.unpack_from("<BB", buf, 4)
    if tag not in _TAG_TO_DTYPE:
        raise BadHeaderError(f"unknown dtype tag {tag}")
    if not 1 <= rank <= 4:
        raise BadHeaderError(f"rank {rank} not in 1..4")
    off = 6 + 4 * rank
    if len(buf) < off:
        raise BadHeaderError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    if any(d == 0 for d in dims):
        raise BadHeaderError(f"zero-length dimension in {dims}")
    dtype = _TAG_TO_DTYPE[tag]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(buf) - off != expected:
        raise PayloadLengthError(
            f"payload length mismatch: header {list(dims)} needs {expected} bytes, got {len(buf) - off}"
        )
    x = np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite value in payload")
    return x.astype(dtype.newbyteorder("="))


def save_tensor(path, x: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Samples and alignment


@dataclass
class VideoSample:
    id: str
    frames: np.ndarray  # [F, d_v]
    audio: np.ndarray  # [F, d_a]
    has_audio: bool = True


@dataclass
class TextQuery:
    id: str
    embedding: np.ndarray  # [d_t]
    video_id: str


@dataclass
class Dataset:
    videos: list[VideoSample]
    texts: list[TextQuery]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.videos)

    def arrays(self, dtype=None):
        """Stack into ``(frames [V,F,d_v], audio [V,F,d_a], text [Q,d_t], truth [Q])``."""
        dtype = dtype or tc.get_dtype()
        index = {v.id: i for i, v in enumerate(self.videos)}
        try:
            truth = np.array([index[t.video_id] for t in self.texts], dtype=np.int64)
        except KeyError as e:
            raise ManifestError(f"text pairs with unknown video {e.args[0]!r}") from None
        frames = np.stack([v.frames for v in self.videos]).astype(dtype)
        audio = np.stack([v.audio for v in self.videos]).astype(dtype)
        text = np.stack([t.embedding for t in self.texts]).astype(dtype)
        return frames, audio, text, truth

    def subset(self, video_idx) -> "Dataset":
        """Videos at ``video_idx`` together with every text paired to them."""
        videos = [self.videos[i] for i in video_idx]
        keep = {v.id for v in videos}
        texts = [t for t in self.texts if t.video_id in keep]
        return Dataset(videos, texts, dict(self.meta))


def align_audio(raw: np.ndarray, frames: int) -> np.ndarray:
    """Average-pool ``[T_a, d_a]`` audio features onto ``frames`` time steps.

    Output row i is the mean of raw rows ``floor(i*T/F) .. floor((i+1)*T/F) - 1``.
    When T_a < F the rows are first repeated by nearest index up to length F.
    """
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.shape[0] == 0:
        raise ValueError("align_audio needs a non-empty [T_a, d_a] array")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    t = raw.shape[0]
    if t < frames:
        raw = raw[(np.arange(frames) * t) // frames]
        t = frames
    bounds = (np.arange(frames + 1) * t) // frames
    return np.stack([raw[bounds[i]:bounds[i + 1]].mean(axis=0) for i in range(frames)])


def sample_frames(frames: np.ndarray, count: int) -> np.ndarray:
    """Pick ``count`` uniformly spaced rows (nearest index) from a frame sequence."""
    t = frames.shape[0]
    if t == count:
        return frames
    idx = np.floor((np.arange(count) + 0.5) * t / count).astype(int)
    return frames[np.minimum(idx, t - 1)]


def project(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + b`` over the last axis."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise tc.DimensionError(f"project shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return tc.matmul(x, w) + b


# ---------------------------------------------------------------------------
# Manifests


def load_manifest(path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    for key in ("d_model", "frames", "items"):
        if key not in doc:
            raise ManifestError(f"manifest missing key {key!r}")
    frames = int(doc["frames"])
    root = path.parent
    videos: dict[str, VideoSample] = {}
    texts: list[TextQuery] = []
    pending_silent = []
    d_audio = None
    for n, item in enumerate(doc["items"]):
        missing = {"id", "text", "video", "pair"} - item.keys()
        if missing:
            raise ManifestError(f"item {n} missing keys {sorted(missing)}")
        vid = str(item["id"])
        if vid not in videos:
            vis = load_tensor(root / item["video"])
            if vis.ndim != 2:
                raise ManifestError(f"video {vid}: expected [T, d_v], got {vis.shape}")
            vis = sample_frames(vis, frames)
            if item.get("audio"):
                aud = load_tensor(root / item["audio"])
                if aud.ndim == 1:
                    aud = aud[None, :]
                aud = align_audio(aud, frames)
                d_audio = d_audio or aud.shape[1]
                videos[vid] = VideoSample(vid, vis, aud, True)
            else:
                videos[vid] = VideoSample(vid, vis, None, False)
                pending_silent.append(vid)
        emb = load_tensor(root / item["text"]).reshape(-1)
        texts.append(TextQuery(f"{vid}#t{n}", emb, str(item["pair"])))
    d_audio = d_audio or int(doc["d_model"])
    for vid in pending_silent:
        v = videos[vid]
        v.audio = np.zeros((frames, d_audio), dtype=v.frames.dtype)
    meta = {"d_model": int(doc["d_model"]), "frames": frames, "source": str(path)}
    ds = Dataset(list(videos.values()), texts, meta)
    ds.arrays()  # validates pairings and shapes
    return ds


def write_manifest(ds: Dataset, out_dir, dtype=np.float32) -> Path:
    """Write every sample as GFT files plus ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    texts_by_video: dict[str, list[TextQuery]] = {}
    for t in ds.texts:
        texts_by_video.setdefault(t.video_id, []).append(t)
    items = []
    for v in ds.videos:
        save_tensor(out / "features" / f"{v.id}.video.gft", v.frames.astype(dtype))
        audio_rel = None
        if v.has_audio:
            audio_rel = f"features/{v.id}.audio.gft"
            save_tensor(out / audio_rel, v.audio.astype(dtype))
        for k, t in enumerate(texts_by_video.get(v.id, [])):
            text_rel = f"features/{v.id}.text{k}.gft"
            save_tensor(out / text_rel, t.embedding.astype(dtype))
            item = {"id": v.id, "text": text_rel, "video": f"features/{v.id}.video.gft", "pair": t.video_id}
            if audio_rel:
                item["audio"] = audio_rel
            items.append(item)
    d_model = int(ds.meta.get("d_model", ds.videos[0].frames.shape[1]))
    frames = int(ds.videos[0].frames.shape[0])
    manifest = {"d_model": d_model, "frames": frames, "items": items}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthConfig:
    samples: int = 256
    frames: int = 12
    d_model: int = 64
    rho: float = 0.5  # fraction of clips whose audio carries the latent
    blank_fraction: float = 0.0  # fraction of visual frames replaced by pure noise
    text_noise: float = 0.5
    frame_noise: float = 1.0
    audio_noise: float = 1.0
    shared_offset: float = 1.0  # weight of the direction common to all latents
    silent_fraction: float = 0.0  # clips with has_audio=False (all-zero audio)

    def validate(self) -> None:
        for name in ("rho", "blank_fraction", "silent_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("text_noise", "frame_noise", "audio_noise", "shared_offset"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.samples < 1 or self.frames < 1 or self.d_model < 1:
            raise ValueError("samples, frames and d_model must be positive")


def gen_synthetic(cfg: SynthConfig, seed: int) -> Dataset:
    """Paired text/video/audio features sharing a per-clip latent ``z``.

    ``z = shared_offset * mu + N(0, I/d)`` where ``mu`` is one unit direction
    for the whole dataset. Text is ``z`` plus noise, visual frames are ``z``
    plus per-frame noise except blanked frames (the noise alone), and audio
    is ``z`` plus noise for a ``rho`` fraction of clips and the noise alone
    otherwise. Noise terms are isotropic with per-coordinate scale
    ``noise/sqrt(d)``, so an uninformative stream is as loud as an
    informative one but carries no latent.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n, f, d = cfg.samples, cfg.frames, cfg.d_model
    s = 1.0 / np.sqrt(d)
    mu = rng.standard_normal(d)
    mu /= np.linalg.norm(mu)
    z = cfg.shared_offset * mu + s * rng.standard_normal((n, d))
    text = z + cfg.text_noise * s * rng.standard_normal((n, d))
    frame_noise = cfg.frame_noise * s * rng.standard_normal((n, f, d))
    blank = rng.random((n, f)) < cfg.blank_fraction
    frames = np.where(blank[..., None], frame_noise, z[:, None, :] + frame_noise)
    informative = rng.random(n) < cfg.rho
    audio_noise = cfg.audio_noise * s * rng.standard_normal((n, f, d))
    audio = np.where(informative[:, None, None], z[:, None, :] + audio_noise, audio_noise)
    silent = rng.random(n) < cfg.silent_fraction
    audio[silent] = 0.0

    videos, texts = [], []
    for i in range(n):
        vid = f"v{i:05d}"
        videos.append(VideoSample(vid, frames[i], audio[i], not silent[i]))
        texts.append(TextQuery(f"t{i:05d}", text[i], vid))
    meta = {
        "d_model": d,
        "frames": f,
        "seed": seed,
        "informative": informative & ~silent,
        "blank": blank,
        "latent": z,
    }
    return Dataset(videos, texts, meta)
