"""Watch charges bind into dipoles as the smearing radius shrinks.

Runs one beta = 3 chain per lambda, then prints the isolated-dipole fraction
and the KS distance between rescaled dipole lengths and the box-conditioned
length law.  Takes about a minute with the default sizes.

    python demos/dipole_concentration.py --n 50 --steps 300000
"""

import argparse

import numpy as np

from tcp_dipoles import estimators as E
from tcp_dipoles import sampler as S


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--beta", type=float, default=3.0)
    ap.add_argument("--steps", type=int, default=300_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    print(f"{'lambda':>8} {'fraction':>10} {'+-':>8} {'KS':>8} {'lengths':>8}")
    for lam, seed in zip((1e-2, 3e-3, 1e-3), S.spawn_seeds(args.seed, 3)):
        rng = np.random.default_rng(seed)
        cfg0 = S.init_paired(rng, args.n, lam, args.beta)
        sched = S.Schedule(burnin=args.steps // 5, steps=args.steps, stride=1000, seed=seed)
        res = S.run(cfg0, lam, args.beta, sched)
        trace = E.observe(res.snapshots, args.n, lam, args.beta)
        d = E.dipole_statistics(trace)
        print(f"{lam:8.0e} {d.fraction:10.4f} {d.fraction_se:8.4f} {d.ks:8.4f} {d.n_lengths:8d}")


if __name__ == "__main__":
    main()
