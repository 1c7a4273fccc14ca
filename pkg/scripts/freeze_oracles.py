"""Recompute the reference values the tests compare against and write them
to tests/data/frozen_oracles.json.

The values come only from tests/oracles.py (loops and 50-digit mpmath), never
from the package. Re-run after changing an oracle, then review the diff.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402


def main() -> None:
    rng = np.random.default_rng(20240611)
    sim5 = rng.normal(0.0, 2.0, size=(5, 5))
    hub = [[0.9, 0.2, 0.1], [0.8, 0.7, 0.1], [0.1, 0.2, 0.6]]
    grid = []
    for d in (3, 16, 128, 512):
        for k in range(1, 12):
            theta = k * math.pi / 12
            grid.append({"theta": theta, "d": d, "log10": oracles.cap_log10_betainc(theta, d)})
    adam_grads = [1.0, -0.5, 0.25]
    doc = {
        "sigmoid_1": oracles.sigmoid_mp(1.0),
        "softmax_123": oracles.softmax_mp([1, 2, 3]),
        "softplus_0": oracles.softplus_mp(0.0),
        "cone_grid": grid,
        "cone_512_pi6": oracles.cap_log10_betainc(math.pi / 6, 512),
        "cone_approx_512_pi6": float(-(511 * (oracles.mpmath.pi / 6) ** 2 / 2) / oracles.mpmath.log(10)),
        "infonce_5x5": {"sim": sim5.tolist(), "loss": oracles.infonce_mp(sim5)},
        "adam_3step": {"p0": 0.5, "grads": adam_grads, "lr": 0.01, "beta1": 0.9, "beta2": 0.98, "eps": 1e-8,
                       "weight_decay": 0.2,
                       "trajectory": oracles.adam_mp(0.5, adam_grads, 0.01, 0.9, 0.98, 1e-8, 0.2)},
        "dsl_hub": {"sim": hub, "beta": 10.0, "out": oracles.dsl_direct(hub, 10.0).tolist()},
    }
    out = ROOT / "tests" / "data" / "frozen_oracles.json"
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
