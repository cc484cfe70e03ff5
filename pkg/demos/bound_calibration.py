"""Calibrate the nearest-neighbour energy bounds and test them on fresh data.

Each bound has an unknown constant.  The script measures the smallest
constant every training instance needs, freezes a multiple of the largest,
and counts violations on a held-out set.  It also reports how often the raw
training maximum alone would have been exceeded, which is the reason for the
safety factor.

    python demos/bound_calibration.py --size 2000
"""

import argparse

import numpy as np

from tcp_dipoles import bounds as B


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    for kind in ("prop21", "cor22", "pairing"):
        train = B.make_instances(kind, args.size, rng)
        test = B.make_instances(kind, args.size, rng)
        res = B.calibrate_and_test(kind, train, test)
        raw_bad, _ = B.count_violations(kind, test, res.raw_max)
        print(f"{kind:8s} raw max {res.raw_max:.4g}  frozen C {res.constant:.4g}  "
              f"violations {res.violations}  (at raw max: {raw_bad})")


if __name__ == "__main__":
    main()
