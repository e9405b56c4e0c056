"""Fitted MSD exponent on a (beta, gamma) grid in d = 1.

    python scripts/phase_diagram.py --betas 0.25 0.5 --gammas 0 0.25 0.5 0.75
"""

import argparse

from wsawlab.observables import MSDConfig, phase_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.25, 0.5])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    r = phase_scan(args.betas, args.gammas, d=1,
                   config=MSDConfig(samples=args.samples, seed=args.seed, threads=args.threads))
    print(f"{'beta':>6} {'gamma':>6} {'slope':>8} {'resid':>7} {'n_eff':>7}  gamma>=beta")
    for row in r.rows():
        print(f"{row['beta']:6.2f} {row['gamma']:6.2f} {row['slope']:8.3f} {row['residual']:7.3f} "
              f"{row['min_n_eff']:7.0f}  {'*' if row['gamma'] >= row['beta'] > 0 else ''}")


if __name__ == "__main__":
    main()
