"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor_core as tc

STEP = 1e-5
# gradients below this magnitude are compared in absolute terms
SCALE_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    tolerance: float
    group_errors: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0
    failures: list[tuple[str, int, float, float]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(self.group_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "coords_checked": self.coords_checked,
            "groups": dict(self.group_errors),
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), SCALE_FLOOR)


def check_gradients(loss_fn, named_params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
                    tolerance: float = 1e-4, max_per_group: int | None = 200, seed: int = 0,
                    step: float = STEP) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``loss_fn()``.

    ``named_params`` are the live arrays ``loss_fn`` reads; each probed
    coordinate is perturbed in place and restored. Groups larger than
    ``max_per_group`` are checked on a seeded random subset of coordinates.
    """
    if tc.get_dtype() is not np.float64:
        raise RuntimeError("gradient checking needs 64-bit precision; use tensor_core.precision('f64')")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for name, x in named_params.items():
        g = np.asarray(analytic[name]).reshape(-1)
        flat = x.reshape(-1)
        n = flat.size
        idx = np.arange(n)
        if max_per_group is not None and n > max_per_group:
            idx = np.sort(rng.choice(n, size=max_per_group, replace=False))
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * step)
            err = relative_error(float(g[i]), num)
            if err > tolerance:
                report.failures.append((name, int(i), float(g[i]), float(num)))
            worst = max(worst, err)
        report.group_errors[name] = worst
        report.coords_checked += len(idx)
    return report


def grad_check(params, batch, opts, tolerance: float = 1e-4, seed: int = 0, max_per_group: int | None = 200,
               corrupt: tuple[str, int, float] | None = None) -> GradCheckReport:
    """Check every parameter group of the full model on one batch.

    ``corrupt=(name, index, delta)`` adds ``delta`` to one analytic
    coordinate before comparison (used to show the harness catches it).
    """
    from .graph import draw_noise, forward_backward, loss_only

    B, F = batch[0].shape[:2]
    noise = draw_noise(np.random.default_rng(seed), B, F, opts, np.float64)
    _, grads, _ = forward_backward(batch, params, opts, noise=noise)
    analytic = {k: v.copy() for k, v in grads.named().items()}
    if corrupt is not None:
        name, i, delta = corrupt
        analytic[name].reshape(-1)[i] += delta
    return check_gradients(
        lambda: loss_only(batch, params, opts, noise),
        params.named(),
        analytic,
        tolerance,
        max_per_group,
        seed,
    )
