"""Violation counts of the torus folding inequalities, plus a two-site example.

Intersection and contact times never decrease under folding. The gradient of
the folded local time can: mass split over two neighbours merges onto one
site of the 2-torus.
"""

import argparse

import numpy as np

from wsawlab.finite_volume import folding_check_batch, folding_inequality_check
from wsawlab.walk import Path, RngStream, sample_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--T", type=float, default=10.0)
    args = ap.parse_args()
    for d, N in ((1, 3), (2, 2)):
        rep = folding_check_batch(sample_batch(args.T, RngStream(d).generator(), d=d, size=args.samples), 2, N)
        tally = {}
        for (_, _, key), v in rep.violations.items():
            tally[key] = tally.get(key, 0) + v
        print(f"d={d} N<={N}: " + ", ".join(f"{k} {v}" for k, v in sorted(tally.items())))
    p = Path((0,), np.array([1.0]), np.array([[0], [1]]), 2.0)
    r = folding_inequality_check(p, 2, 1)
    print(f"two-site path: grad on 4-torus {r.fine['grad']:.1f}, on 2-torus {r.coarse['grad']:.1f}")


if __name__ == "__main__":
    main()
