"""Tabulate log10 of the spherical cap fraction against the concentration
estimate exp(-(d-1) theta^2 / 2) over a grid of angles and dimensions.

    python scripts/cone_table.py [--dims 3,16,128,512] [--thetas 10,30,60,90]
"""

import argparse

from gaid.experiments import cone_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dims", default="3,16,64,128,512")
    ap.add_argument("--thetas", default="10,30,45,60,80,90,120")
    args = ap.parse_args()
    rows = cone_table([float(x) for x in args.thetas.split(",")], [int(x) for x in args.dims.split(",")])
    print(f"{'d':>5}{'theta':>8}{'log10 exact':>14}{'log10 approx':>14}")
    for r in rows:
        print(f"{r['dim']:>5}{r['theta_deg']:>8.1f}{r['log10_exact']:>14.4f}{r['log10_approx']:>14.4f}")


if __name__ == "__main__":
    main()
