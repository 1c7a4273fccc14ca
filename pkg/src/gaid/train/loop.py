"""Minibatch training with per-epoch validation and best-checkpoint selection."""

from __future__ import annotations

import logging
import math

import numpy as np

from .. import tensor_core as tc
from ..config import RunConfig
from .adam import AdamState, adam_step
from .graph import GraphOptions, forward_backward
from .params import ModelParams, init_from_config

log = logging.getLogger(__name__)


def input_dims(dataset) -> dict[str, int]:
    v = dataset.videos[0]
    return {"video": v.frames.shape[1], "audio": v.audio.shape[1], "text": dataset.texts[0].embedding.shape[0]}


def _paired_rows(dataset):
    """One training row per caption: (frames, audio, text) of the same clip."""
    frames, audio, text, truth = dataset.arrays(tc.get_dtype())
    return frames[truth], audio[truth], text


def train(dataset, cfg: RunConfig, val=None, params: ModelParams | None = None, callback=None):
    """Train on ``dataset``; returns ``(best params, history)``.

    ``history`` holds one dict per epoch (epoch 0 is the untrained model)
    with the mean training loss and validation R@1. Validation uses ``val``
    or, if absent, the training set. The returned parameters are those of
    the epoch with the highest validation R@1 (earliest on ties).
    """
    from ..evaluation import evaluate

    if len(dataset) == 0 or not dataset.texts:
        raise ValueError("cannot train on an empty dataset")
    val = val if val is not None else dataset
    if params is None:
        params = init_from_config(cfg, input_dims(dataset))
    params = params.astype(tc.get_dtype())
    opts = GraphOptions(cfg.perturb_mode, cfg.lam, cfg.dropout)
    frames, audio, text = _paired_rows(dataset)
    n = text.shape[0]
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    noise_rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()

    def validate():
        res = evaluate(params, val, cfg.perturb_mode, cfg.stp_samples, cfg.dsl_beta, seed=cfg.seed)
        return res.t2v.r1

    history = [{"epoch": 0, "train_loss": None, "l_pert": None, "l_sup": None, "val_r1": validate(),
                "alpha": params.perturb.alpha, "temperature": float(np.exp(params.log_temperature))}]
    best, best_r1 = params.copy(), history[0]["val_r1"]
    if callback:
        callback(history[-1])
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        totals = []
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            if len(idx) < 2:
                continue
            batch = (frames[idx], audio[idx], text[idx])
            loss, grads, _ = forward_backward(batch, params, opts, rng=noise_rng)
            adam_step(params, grads, state, cfg.lr, cfg.lr_projection, cfg.beta1, cfg.beta2, cfg.eps,
                      cfg.weight_decay, cfg.lr_gate)
            totals.append((loss.total, loss.l_pert, loss.l_sup))
        mean = np.mean(totals, axis=0) if totals else [math.nan] * 3
        r1 = validate()
        entry = {"epoch": epoch, "train_loss": float(mean[0]), "l_pert": float(mean[1]), "l_sup": float(mean[2]),
                 "val_r1": r1, "alpha": params.perturb.alpha, "temperature": float(np.exp(params.log_temperature))}
        history.append(entry)
        log.info("epoch %d loss %.4f val R@1 %.2f", epoch, entry["train_loss"], r1)
        if callback:
            callback(entry)
        if r1 > best_r1:
            best, best_r1 = params.copy(), r1
    return best, history
