"""Model parameter container, initialisation and checkpoint I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor_core as tc
from ..config import RunConfig
from ..feature_io import load_tensor, save_tensor
from ..fusion import AttnParams, GateParams, Granularity
from ..perturbation import PerturbParams

MODALITIES = ("video", "audio", "text")


@dataclass
class ModelParams:
    gate: GateParams | None
    attn: AttnParams
    perturb: PerturbParams
    log_temperature: np.ndarray  # 0-d
    projections: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def granularity(self) -> Granularity:
        return Granularity.NONE if self.gate is None else self.gate.granularity

    @property
    def d(self) -> int:
        return self.attn.W_q.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        """Stable name -> array mapping. Arrays are the live storage."""
        out = {}
        if self.gate is not None:
            out["gate.W_g"] = self.gate.W_g
            out["gate.b_g"] = self.gate.b_g
        for k in ("W_q", "W_k", "W_v", "W_o"):
            out[f"attn.{k}"] = getattr(self.attn, k)
        out["perturb.alpha_raw"] = self.perturb.alpha_raw
        out["perturb.W_s"] = self.perturb.W_s
        out["perturb.b_s"] = self.perturb.b_s
        out["log_temperature"] = self.log_temperature
        for m in MODALITIES:
            if m in self.projections:
                w, b = self.projections[m]
                out[f"proj.{m}.W"] = w
                out[f"proj.{m}.b"] = b
        return out

    def map(self, fn) -> "ModelParams":
        """New container with ``fn`` applied to every array."""
        gate = None
        if self.gate is not None:
            gate = GateParams(fn(self.gate.W_g), fn(self.gate.b_g), self.gate.granularity)
        return ModelParams(
            gate,
            AttnParams(*(fn(getattr(self.attn, k)) for k in ("W_q", "W_k", "W_v", "W_o"))),
            PerturbParams(fn(self.perturb.alpha_raw), fn(self.perturb.W_s), fn(self.perturb.b_s)),
            fn(self.log_temperature),
            {m: (fn(w), fn(b)) for m, (w, b) in self.projections.items()},
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def astype(self, dtype) -> "ModelParams":
        return self.map(lambda x: np.array(x, dtype=dtype))

    def flatten(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.named().values()])

    def assign_flat(self, vec: np.ndarray) -> None:
        i = 0
        for x in self.named().values():
            x[...] = vec[i:i + x.size].reshape(x.shape)
            i += x.size

    def groups(self) -> dict[str, str]:
        """Optimizer group of each parameter: ``projection``, ``gate`` or ``new``."""
        return {k: ("projection" if k.startswith("proj.") else "gate" if k.startswith("gate.") else "new")
                for k in self.named()}

    def decayed(self) -> set[str]:
        """Names that receive decoupled weight decay (weight matrices only)."""
        return {k for k, x in self.named().items() if x.ndim == 2}


def init_params(
    d: int,
    granularity="frame",
    seed: int = 0,
    input_dims: dict[str, int] | None = None,
    init_temperature: float = 1 / 0.07,
    std_init_bias: float = -4.0,
    dtype=None,
) -> ModelParams:
    """Seeded initialisation.

    Gates start at 0.5 (zero weights), attention maps are small random, the
    std estimator starts near ``softplus(std_init_bias)`` per channel and
    ``alpha`` starts at 0.5. ``input_dims`` adds an input projection for each
    modality whose native width differs from ``d``.
    """
    dtype = dtype or tc.get_dtype()
    rng = np.random.default_rng(seed)
    gran = Granularity(granularity)
    gate = None if gran is Granularity.NONE else GateParams.zeros(d, gran, dtype)
    s = 1.0 / math.sqrt(d)
    attn = AttnParams(*(np.asarray(s * rng.standard_normal((d, d)), dtype) for _ in range(4)))
    attn.W_v *= 0.1
    attn.W_o *= 0.1
    perturb = PerturbParams(
        np.zeros((), dtype),
        np.asarray(0.01 * rng.standard_normal((2 * d, d)), dtype),
        np.full(d, std_init_bias, dtype),
    )
    projections = {}
    for m in MODALITIES:
        d_in = (input_dims or {}).get(m, d)
        if d_in != d:
            w = np.asarray(rng.standard_normal((d_in, d)) / math.sqrt(d_in), dtype)
            projections[m] = (w, np.zeros(d, dtype))
    return ModelParams(gate, attn, perturb, np.asarray(math.log(init_temperature), dtype), projections)


def init_from_config(cfg: RunConfig, input_dims: dict[str, int] | None = None) -> ModelParams:
    return init_params(
        cfg.d_model,
        cfg.granularity,
        cfg.seed,
        input_dims,
        cfg.init_temperature,
        cfg.std_init_bias,
    )


# ---------------------------------------------------------------------------
# Checkpoints: one GFT file per tensor plus index.json


def save_checkpoint(params: ModelParams, out_dir, cfg: RunConfig | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"granularity": params.granularity.value, "d": params.d, "tensors": []}
    for name, x in params.named().items():
        fname = f"{name}.gft"
        arr = np.atleast_1d(np.asarray(x))
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        save_tensor(out / fname, arr)
        index["tensors"].append({"name": name, "file": fname, "shape": list(np.shape(x))})
    if cfg is not None:
        index["config"] = cfg.to_dict()
    if extra:
        index.update(extra)
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")
    return out


class CheckpointError(ValueError):
    pass


def load_checkpoint(ckpt_dir) -> tuple[ModelParams, dict]:
    root = Path(ckpt_dir)
    try:
        index = json.loads((root / "index.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint index in {root}: {e}") from e
    dtype = tc.get_dtype()
    arrays = {}
    for entry in index["tensors"]:
        x = load_tensor(root / entry["file"]).astype(dtype)
        arrays[entry["name"]] = x.reshape(entry["shape"])
    gran = Granularity(index["granularity"])
    try:
        gate = None
        if gran is not Granularity.NONE:
            gate = GateParams(arrays["gate.W_g"], arrays["gate.b_g"], gran)
        attn = AttnParams(*(arrays[f"attn.{k}"] for k in ("W_q", "W_k", "W_v", "W_o")))
        perturb = PerturbParams(arrays["perturb.alpha_raw"], arrays["perturb.W_s"], arrays["perturb.b_s"])
        projections = {
            m: (arrays[f"proj.{m}.W"], arrays[f"proj.{m}.b"]) for m in MODALITIES if f"proj.{m}.W" in arrays
        }
        params = ModelParams(gate, attn, perturb, arrays["log_temperature"], projections)
    except KeyError as e:
        raise CheckpointError(f"checkpoint missing tensor {e.args[0]}") from None
    if not np.all(np.isfinite(params.flatten())):
        raise CheckpointError("checkpoint contains non-finite parameters")
    return params, index
