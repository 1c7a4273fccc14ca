"""Retrieval evaluation: ranking metrics, dual-softmax post-processing and
the single-pass vs multi-sample inference cost comparison."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor_core as tc
from .perturbation import PerturbMode
from .train.graph import encode_clips, encode_texts, fuse_pairs, gates_paired, score_pass
from .train.params import ModelParams

# elements per chunk of the [Q, V, F, d] pair tensors
PAIR_BUDGET = 1 << 21


@dataclass
class RetrievalMetrics:
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CostReport:
    forward_passes_per_query: int
    wall_time: float  # scoring passes only
    embed_time: float  # shared text/video encoding
    total_time: float

    def to_dict(self) -> dict:
        return asdict(self)


def _metrics_from_ranks(ranks: np.ndarray) -> RetrievalMetrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    n = ranks.size

    def pct(k):
        # integer count scaled before the single division: correctly rounded
        return 100.0 * int(np.sum(ranks <= k)) / n

    return RetrievalMetrics(
        r1=pct(1),
        r5=pct(5),
        r10=pct(10),
        mdr=float(np.median(ranks)),
        mnr=float(np.mean(ranks)),
    )


def query_ranks(sim: np.ndarray, truth) -> np.ndarray:
    """Rank of each query's true column; ties count against the query."""
    sim = np.asarray(sim)
    truth = np.asarray(truth)
    if truth.shape != (sim.shape[0],):
        raise ValueError(f"need one ground-truth column per query, got {truth.shape} for {sim.shape}")
    if np.any((truth < 0) | (truth >= sim.shape[1])):
        raise ValueError("ground-truth index out of range")
    true = sim[np.arange(sim.shape[0]), truth][:, None]
    # the true column itself always satisfies >=, so it supplies the leading 1
    return np.sum(sim >= true, axis=1)


def rank_metrics(sim: np.ndarray, truth) -> RetrievalMetrics:
    return _metrics_from_ranks(query_ranks(sim, truth))


def v2t_ranks(sim: np.ndarray, truth) -> np.ndarray:
    """Per-video rank of its best-ranked true caption.

    ``sim`` is ``[texts, videos]`` and ``truth[q]`` the video of caption q.
    Competitors are the captions of other videos scoring at least as high
    as the best true caption.
    """
    sim = np.asarray(sim)
    truth = np.asarray(truth)
    if truth.shape != (sim.shape[0],):
        raise ValueError(f"need one video per caption, got {truth.shape} for {sim.shape}")
    n_videos = sim.shape[1]
    owner = truth[:, None] == np.arange(n_videos)[None, :]  # [Q, V]
    if not np.all(owner.any(axis=0)):
        raise ValueError("every video needs at least one caption")
    best = np.where(owner, sim, -np.inf).max(axis=0)  # [V]
    return 1 + np.sum((sim >= best[None, :]) & ~owner, axis=0)


def v2t_metrics(sim: np.ndarray, truth) -> RetrievalMetrics:
    return _metrics_from_ranks(v2t_ranks(sim, truth))


def dsl(sim: np.ndarray, beta: float = 100.0) -> np.ndarray:
    """Dual-softmax reweighting: each score times its softmax mass over the
    queries competing for the same column."""
    sim = np.asarray(sim)
    return sim * tc.softmax(beta * sim, axis=0)


# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    t2v: RetrievalMetrics
    v2t: RetrievalMetrics
    t2v_dsl: RetrievalMetrics
    v2t_dsl: RetrievalMetrics
    cost: CostReport
    sim: np.ndarray  # cosine-scale scores [Q, V]
    truth: np.ndarray

    def to_dict(self) -> dict:
        return {
            "t2v": self.t2v.to_dict(),
            "v2t": self.v2t.to_dict(),
            "dsl": {"t2v": self.t2v_dsl.to_dict(), "v2t": self.v2t_dsl.to_dict()},
            "cost": self.cost.to_dict(),
        }


def pair_embeddings(params: ModelParams, frames, audio, text) -> tuple[np.ndarray, np.ndarray]:
    """Normalised texts ``[Q, d]`` and per-pair video embeddings ``[Q, V, d]``."""
    t = encode_texts(params, text)
    f, a = encode_clips(params, frames, audio)
    V, F, d = f.shape
    chunk = max(1, PAIR_BUDGET // (V * F * d))
    parts = [fuse_pairs(params, f, a, t[i:i + chunk])[0] for i in range(0, t.shape[0], chunk)]
    return t, np.concatenate(parts, axis=0)


def score_all(params: ModelParams, t, E, mode, sigma=None) -> np.ndarray:
    """One scoring pass over every query, chunked to bound memory."""
    Q, V, d = E.shape
    chunk = max(1, PAIR_BUDGET // (V * d))
    out = []
    for i in range(0, Q, chunk):
        s = None if sigma is None else sigma[i:i + chunk]
        out.append(score_pass(params, t[i:i + chunk], E[i:i + chunk], mode, s))
    return np.concatenate(out, axis=0)


def evaluate(params: ModelParams, dataset, mode="dasp", stp_samples: int = 20, dsl_beta: float = 100.0,
             seed: int = 0, sigma_fn=None) -> EvalResult:
    """Text-to-video and video-to-text retrieval on ``dataset``.

    ``mode`` ``dasp`` scores each query once with the deterministic
    perturbation; ``stp`` draws ``stp_samples`` perturbations per query and
    keeps the best score of each (query, video) pair; ``none`` scores the raw
    text. ``sigma_fn(k, shape)`` overrides the k-th STP draw.
    """
    mode = PerturbMode(mode)
    if mode is PerturbMode.STP and stp_samples < 1:
        raise ValueError("stp_samples must be >= 1")
    if not np.all(np.isfinite(params.flatten())):
        raise ValueError("invalid checkpoint: non-finite parameters")
    dtype = tc.get_dtype()
    frames, audio, text, truth = dataset.arrays(dtype)
    start = time.perf_counter()
    t, E = pair_embeddings(params, frames, audio, text)
    embed_time = time.perf_counter() - start

    rng = np.random.default_rng(seed)
    passes = 0
    start = time.perf_counter()
    if mode is PerturbMode.STP:
        sim = None
        for k in range(stp_samples):
            shape = E.shape[:2]
            sigma = sigma_fn(k, shape) if sigma_fn else rng.standard_normal(shape).astype(dtype)
            s = score_all(params, t, E, mode, sigma)
            sim = s if sim is None else np.maximum(sim, s)
            passes += 1
    else:
        sim = score_all(params, t, E, mode)
        passes += 1
    wall = time.perf_counter() - start

    cos = sim / np.exp(params.log_temperature)
    result = EvalResult(
        t2v=rank_metrics(cos, truth),
        v2t=v2t_metrics(cos, truth),
        t2v_dsl=rank_metrics(dsl(cos, dsl_beta), truth),
        # video queries compete over the video axis
        v2t_dsl=v2t_metrics(dsl(cos.T, dsl_beta).T, truth),
        cost=CostReport(passes, wall, embed_time, embed_time + wall),
        sim=cos,
        truth=truth,
    )
    return result


def mean_gates(params: ModelParams, dataset) -> np.ndarray:
    """Mean gate value of each clip when conditioned on its own caption."""
    frames, audio, text, truth = dataset.arrays()
    first = {}
    for q, v in enumerate(truth):
        first.setdefault(int(v), q)
    t = encode_texts(params, text[[first[i] for i in range(len(frames))]])
    f, a = encode_clips(params, frames, audio)
    g = gates_paired(params, f, a, t)
    return g.reshape(g.shape[0], -1).mean(axis=1)


def write_rank_csv(path, result: EvalResult) -> None:
    ranks = query_ranks(result.sim, result.truth)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query,true_video,rank\n")
        for q, (v, r) in enumerate(zip(result.truth, ranks)):
            fh.write(f"{q},{v},{r}\n")
