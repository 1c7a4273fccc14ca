"""Desk-scale experiments: fusion and perturbation ablations, gradient suite, cone table."""

from __future__ import annotations

import itertools
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_core as tc
from .config import RunConfig
from .evaluation import evaluate, mean_gates
from .feature_io import Dataset, SynthConfig, gen_synthetic
from .fusion import Granularity
from .geometry import cap_fraction_approx_log, cap_fraction_log
from .perturbation import PerturbMode
from .train.gradcheck import grad_check
from .train.graph import GraphOptions
from .train.loop import train
from .train.params import init_params

log = logging.getLogger(__name__)

GRANULARITIES = tuple(g.value for g in Granularity)
PERTURB_MODES = tuple(m.value for m in PerturbMode)


def _ablation_synth() -> SynthConfig:
    return SynthConfig(samples=768, frames=12, d_model=64, rho=0.5, blank_fraction=0.3,
                       text_noise=1.5, frame_noise=4.0, audio_noise=4.0)


def _ablation_run() -> RunConfig:
    return RunConfig(epochs=5, batch_size=32, frames=12, d_model=64, lr=1e-3, lr_projection=1e-4, lr_gate=1e-2)


@dataclass
class AblationConfig:
    """Shared setup of the ablations: data, split sizes, seeds and training."""

    seeds: tuple[int, ...] = (0, 1, 2)
    n_train: int = 512
    n_val: int = 128
    n_test: int = 128
    synth: SynthConfig = field(default_factory=_ablation_synth)
    run: RunConfig = field(default_factory=_ablation_run)

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 2:
            raise ValueError("every split needs at least two clips")

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test,
                "synth": asdict(self.synth), "run": self.run.to_dict()}


def split(ds: Dataset, n_train: int, n_val: int, n_test: int) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous train/val/test split by clip order."""
    if n_train + n_val + n_test > len(ds):
        raise ValueError(f"dataset has {len(ds)} clips, split needs {n_train + n_val + n_test}")
    a, b = n_train, n_train + n_val
    return ds.subset(range(a)), ds.subset(range(a, b)), ds.subset(range(b, b + n_test))


def _data_for_seed(cfg: AblationConfig, seed: int, dataset: Dataset | None):
    if dataset is None:
        synth = cfg.synth
        need = cfg.n_train + cfg.n_val + cfg.n_test
        if synth.samples < need:
            synth = SynthConfig(**{**asdict(synth), "samples": need})
        dataset = gen_synthetic(synth, seed)
    return dataset, split(dataset, cfg.n_train, cfg.n_val, cfg.n_test)


def _gate_split(params, test: Dataset, informative) -> dict | None:
    if params.gate is None or informative is None:
        return None
    g = mean_gates(params, test)
    noise, info = g[~informative], g[informative]
    return {
        "noise_audio": float(noise.mean()) if noise.size else None,
        "informative_audio": float(info.mean()) if info.size else None,
    }


def ablate_fusion(cfg: AblationConfig | None = None, dataset: Dataset | None = None,
                  granularities=GRANULARITIES, progress=None) -> dict:
    """Train and test each fusion granularity over every seed.

    Without ``dataset`` a fresh synthetic set is drawn per seed, and the
    mean learned gate on test clips is split by whether their audio carries
    the latent. Returns per-run rows and per-granularity medians of test R@1.
    """
    cfg = cfg or AblationConfig()
    rows = []
    start = time.perf_counter()
    for seed in cfg.seeds:
        ds, (tr, va, te) = _data_for_seed(cfg, seed, dataset)
        informative = ds.meta.get("informative")
        if informative is not None:
            b = cfg.n_train + cfg.n_val
            informative = np.asarray(informative[b:b + cfg.n_test], dtype=bool)
        for gran in granularities:
            t0 = time.perf_counter()
            run = cfg.run.replace(granularity=gran, seed=seed)
            params, history = train(tr, run, va)
            res = evaluate(params, te, run.perturb_mode, run.stp_samples, run.dsl_beta, seed=seed)
            row = {
                "granularity": gran,
                "seed": seed,
                "test": res.t2v.to_dict(),
                "val_r1": [h["val_r1"] for h in history],
                "gates": _gate_split(params, te, informative),
                "seconds": time.perf_counter() - t0,
            }
            rows.append(row)
            if progress:
                progress(row)
    summary = {g: statistics.median(r["test"]["r1"] for r in rows if r["granularity"] == g) for g in granularities}
    return {"config": cfg.to_dict(), "runs": rows, "median_r1": summary, "seconds": time.perf_counter() - start}


def ablate_perturb(cfg: AblationConfig | None = None, dataset: Dataset | None = None,
                   modes=PERTURB_MODES, progress=None) -> dict:
    """Train with each perturbation mode and evaluate with the same mode.

    Uses the first seed of ``cfg``. Each row carries the retrieval metrics,
    the DSL-reranked metrics and the inference cost.
    """
    cfg = cfg or AblationConfig()
    seed = cfg.seeds[0]
    _, (tr, va, te) = _data_for_seed(cfg, seed, dataset)
    rows = []
    for mode in modes:
        run = cfg.run.replace(perturb_mode=mode, seed=seed)
        params, _ = train(tr, run, va)
        res = evaluate(params, te, mode, run.stp_samples, run.dsl_beta, seed=seed)
        row = {"mode": mode, **res.to_dict(), "alpha": params.perturb.alpha}
        rows.append(row)
        if progress:
            progress(row)
    return {"config": cfg.to_dict(), "runs": rows}


def eval_cost(samples: int = 512, d: int = 64, frames: int = 12, stp_samples: int = 20, seed: int = 0,
              granularity: str = "frame") -> dict:
    """Scoring cost of STP against DASP on one synthetic set with a fresh model."""
    ds = gen_synthetic(SynthConfig(samples=samples, frames=frames, d_model=d, rho=0.5, blank_fraction=0.3), seed)
    params = init_params(d, granularity, seed)
    out = {}
    for mode in ("stp", "dasp"):
        out[mode] = evaluate(params, ds, mode, stp_samples, seed=seed).cost.to_dict()
    out["wall_time_ratio"] = out["stp"]["wall_time"] / out["dasp"]["wall_time"]
    return out


# ---------------------------------------------------------------------------


def _jitter(params, rng: np.random.Generator, scale: float):
    # move off the initialisation so gates and attention are not at flat points
    for name, x in params.named().items():
        if name != "log_temperature":
            x += scale * rng.standard_normal(x.shape)
    return params


def grad_check_suite(d: int = 16, frames: int = 4, batch: int = 4, seed: int = 0, tolerance: float = 1e-4,
                     lam: float = 0.8, dropout: float = 0.3, max_per_group: int | None = None,
                     granularities=GRANULARITIES, modes=PERTURB_MODES) -> dict:
    """Finite-difference check of the full graph for every granularity x mode."""
    start = time.perf_counter()
    configs = []
    with tc.precision("f64"):
        ds = gen_synthetic(SynthConfig(samples=batch, frames=frames, d_model=d, rho=0.5, blank_fraction=0.3), seed)
        f, a, t, _ = ds.arrays()
        for k, (gran, mode) in enumerate(itertools.product(granularities, modes)):
            params = _jitter(init_params(d, gran, seed + 1), np.random.default_rng([seed, k]), 0.3)
            rep = grad_check(params, (f, a, t), GraphOptions(mode, lam, dropout), tolerance, seed, max_per_group)
            configs.append({"granularity": gran, "perturb_mode": mode, **rep.to_dict()})
    worst = max((c["max_rel_error"] for c in configs), default=0.0)
    return {
        "d": d, "frames": frames, "batch": batch, "tolerance": tolerance,
        "max_rel_error": worst,
        "passed": all(c["passed"] for c in configs),
        "configs": configs,
        "seconds": time.perf_counter() - start,
    }


def cone_row(theta_deg: float, dim: int) -> dict:
    theta = math.radians(theta_deg)
    return {"theta_deg": theta_deg, "dim": dim, "log10_exact": cap_fraction_log(theta, dim),
            "log10_approx": cap_fraction_approx_log(theta, dim)}


def cone_table(thetas_deg=(10, 30, 45, 60, 80, 90, 120), dims=(3, 16, 64, 128, 512)) -> list[dict]:
    return [cone_row(th, d) for d in dims for th in thetas_deg]
