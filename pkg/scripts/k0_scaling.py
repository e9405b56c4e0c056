"""Spread of ||K0||/|gamma0| around its small-gamma0 limit across coupling points."""

import argparse
import itertools

from wsawlab.norms import LocalCouplings, k0_norm_and_regulators


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--g0", type=float, nargs="+", default=[0.02, 0.1, 0.5])
    ap.add_argument("--nu0", type=float, nargs="+", default=[-0.5, 0.0, 0.5])
    ap.add_argument("--z0", type=float, nargs="+", default=[0.0])
    args = ap.parse_args()
    print(f"{'g0':>5} {'nu0':>5} {'z0':>5} {'limit':>8} {'spread+':>8} {'spread-':>8}")
    for g0, nu0, z0 in itertools.product(args.g0, args.nu0, args.z0):
        r = k0_norm_and_regulators(LocalCouplings(g0, 0.0, nu0, z0), regulators=False)
        print(f"{g0:5.2f} {nu0:5.2f} {z0:5.2f} {r.limit:8.3f} {r.spread['+']:8.4f} {r.spread['-']:8.4f}")


if __name__ == "__main__":
    main()
