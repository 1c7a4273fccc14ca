"""Compare no perturbation, stochastic perturbation (multi-pass inference)
and the deterministic directional form: retrieval metrics and inference cost.

    python scripts/run_perturb_ablation.py [--stp-samples 20] [--out results/perturb.json]
"""

import argparse

from gaid.cli import dumps
from gaid.experiments import AblationConfig, ablate_perturb, eval_cost


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stp-samples", type=int, default=20)
    ap.add_argument("--cost-samples", type=int, default=512, help="clips in the cost benchmark")
    ap.add_argument("--out")
    args = ap.parse_args()
    base = AblationConfig()
    cfg = AblationConfig((args.seed,), run=base.run.replace(stp_samples=args.stp_samples))
    res = ablate_perturb(cfg)
    print(f"{'mode':<6}{'R@1':>7}{'R@5':>7}{'MdR':>6}{'DSL R@1':>9}{'passes':>8}{'scoring s':>11}")
    for r in res["runs"]:
        c = r["cost"]
        print(f"{r['mode']:<6}{r['t2v']['r1']:>7.2f}{r['t2v']['r5']:>7.2f}{r['t2v']['mdr']:>6.1f}"
              f"{r['dsl']['t2v']['r1']:>9.2f}{c['forward_passes_per_query']:>8}{c['wall_time']:>11.3f}")
    cost = eval_cost(samples=args.cost_samples, stp_samples=args.stp_samples, seed=args.seed)
    print(f"\n{args.cost_samples}-clip benchmark: stp {cost['stp']['wall_time']:.2f}s vs dasp "
          f"{cost['dasp']['wall_time']:.2f}s scoring ({cost['wall_time_ratio']:.1f}x)")
    res["cost_benchmark"] = cost
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dumps(res) + "\n")


if __name__ == "__main__":
    main()
