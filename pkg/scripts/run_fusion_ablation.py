"""Train every fusion granularity on synthetic data over three seeds and
print the comparison table (median test R@1 and mean gate by audio type).

    python scripts/run_fusion_ablation.py [--out results/fusion.json]
"""

import argparse
import json
import statistics
import sys

from gaid.cli import dumps
from gaid.experiments import AblationConfig, ablate_fusion


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out")
    args = ap.parse_args()
    base = AblationConfig()
    cfg = AblationConfig(tuple(int(s) for s in args.seeds.split(",")), run=base.run.replace(epochs=args.epochs))
    res = ablate_fusion(cfg, progress=lambda r: print(f"  seed {r['seed']} {r['granularity']:>6} "
                                                        f"R@1 {r['test']['r1']:6.2f}", file=sys.stderr))
    print(f"{'granularity':<12}{'median R@1':>11}{'gate(noise)':>13}{'gate(inform.)':>15}")
    for g, med in res["median_r1"].items():
        rows = [r for r in res["runs"] if r["granularity"] == g and r["gates"]]
        if rows:
            noise = statistics.mean(r["gates"]["noise_audio"] for r in rows)
            info = statistics.mean(r["gates"]["informative_audio"] for r in rows)
            print(f"{g:<12}{med:>11.2f}{noise:>13.3f}{info:>15.3f}")
        else:
            print(f"{g:<12}{med:>11.2f}{'-':>13}{'-':>15}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dumps(res) + "\n")


if __name__ == "__main__":
    main()
